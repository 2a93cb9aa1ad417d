export interface RunRecord {
  run_id: string;
  kind: string;
  created_at: number;
  status: string;
  session_ids: string[];
  artifact_dir: string;
  config_hash: string;
}

export interface LaunchResult {
  run_id: string;
  session_id: string;
  status: string;
}

export interface SessionEvent {
  event_seq: number;
  type: "message" | "gate-request" | "status-change";
  session_id: string;
  payload: Record<string, unknown>;
}

export type GateDecision = "continue" | "exit";

export interface GateResult {
  /** "accepted" resolved a pending gate; "acknowledged" re-confirmed
   * the decision that already resolved the last one. */
  status: "accepted" | "acknowledged";
  decision: GateDecision;
}

export interface ReportCell {
  correct: number;
  total: number;
  /** Pre-rendered percentage string; displayed verbatim, never
   * recomputed client-side. */
  percent: string;
}

export interface ReportPayload {
  framework_id: string;
  overall: ReportCell;
  by_difficulty: Record<string, ReportCell>;
  by_physics: Record<string, ReportCell>;
  ungraded: string[];
}
