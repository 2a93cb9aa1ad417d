import type {
  GateDecision,
  GateResult,
  LaunchResult,
  ReportPayload,
  RunRecord,
} from "./types.js";

export class ServiceError extends Error {
  constructor(
    message: string,
    public readonly status: number,
  ) {
    super(message);
    this.name = "ServiceError";
  }
}

/** A conflicting gate decision (HTTP 409): a different decision already
 * resolved this gate, or no gate is pending. */
export class GateConflictError extends ServiceError {
  constructor(message: string) {
    super(message, 409);
    this.name = "GateConflictError";
  }
}

async function expectJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    const detail = await response.text().catch(() => "");
    throw new ServiceError(
      `${response.status} ${response.statusText}: ${detail}`,
      response.status,
    );
  }
  return (await response.json()) as T;
}

export class ConsoleClient {
  constructor(readonly baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  async listRuns(): Promise<RunRecord[]> {
    return expectJson(await fetch(`${this.baseUrl}/runs`));
  }

  async getRun(runId: string): Promise<RunRecord> {
    return expectJson(await fetch(`${this.baseUrl}/runs/${runId}`));
  }

  async launchRun(config: string, problem?: string): Promise<LaunchResult> {
    return expectJson(
      await fetch(`${this.baseUrl}/runs`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ config, problem: problem ?? null }),
      }),
    );
  }

  /** Submit the admin decision for the session's pending gate.
   * Re-posting the decision that already resolved the last gate is a
   * safe no-op ("acknowledged"); a different decision raises
   * GateConflictError. */
  async submitGate(
    sessionId: string,
    decision: GateDecision,
  ): Promise<GateResult> {
    const response = await fetch(
      `${this.baseUrl}/sessions/${sessionId}/gate`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ decision }),
      },
    );
    if (response.status === 409) {
      const detail = await response.text().catch(() => "");
      throw new GateConflictError(detail);
    }
    return expectJson(response);
  }

  async getReport(reportId: string): Promise<ReportPayload> {
    return expectJson(await fetch(`${this.baseUrl}/reports/${reportId}`));
  }

  eventsUrl(sessionId: string, cursor: number): string {
    return `${this.baseUrl}/sessions/${sessionId}/events?cursor=${cursor}`;
  }
}
