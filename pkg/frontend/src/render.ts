import type { ReportCell, ReportPayload, SessionEvent } from "./types.js";

/** One console line per event: transcript messages, gate prompts, and
 * status changes. */
export function renderEvent(event: SessionEvent): string {
  switch (event.type) {
    case "message": {
      const sender = String(event.payload["sender"] ?? "?");
      const kind = String(event.payload["kind"] ?? "text");
      const content = String(event.payload["content"] ?? "");
      const head = content.split("\n", 1)[0];
      return `#${event.event_seq} [${sender}/${kind}] ${head}`;
    }
    case "gate-request": {
      const message = String(event.payload["evaluator_message"] ?? "");
      return `#${event.event_seq} GATE awaiting decision: ${message.split("\n", 1)[0]}`;
    }
    case "status-change":
      return `#${event.event_seq} STATUS ${String(event.payload["status"])}`;
  }
}

function renderCell(label: string, cell: ReportCell): string {
  // The percent string arrives pre-rendered from the service and is
  // shown byte-for-byte; the console never re-rounds it.
  return `${label.padEnd(14)} ${String(cell.correct).padStart(3)}/${String(
    cell.total,
  ).padEnd(3)} ${cell.percent}%`;
}

export function renderReport(report: ReportPayload): string[] {
  const lines: string[] = [];
  lines.push(`framework: ${report.framework_id}`);
  lines.push(renderCell("overall", report.overall));
  lines.push("by difficulty:");
  for (const [label, cell] of Object.entries(report.by_difficulty)) {
    lines.push("  " + renderCell(label, cell));
  }
  lines.push("by physics:");
  for (const [label, cell] of Object.entries(report.by_physics)) {
    lines.push("  " + renderCell(label, cell));
  }
  if (report.ungraded.length > 0) {
    lines.push(`ungraded (counted incorrect): ${report.ungraded.join(", ")}`);
  }
  return lines;
}
