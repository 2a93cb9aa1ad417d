import { ConsoleClient, GateConflictError, ServiceError } from "./client.js";
import { subscribeEvents } from "./events.js";
import { renderEvent, renderReport } from "./render.js";

export { ConsoleClient, GateConflictError, ServiceError } from "./client.js";
export {
  isTerminalEvent,
  parseNdjson,
  subscribeEvents,
} from "./events.js";
export { renderEvent, renderReport } from "./render.js";
export type * from "./types.js";

const USAGE = `usage: console <base-url> <command> [args]

commands:
  runs                         list runs
  launch <config> [problem]    start a run from a named config
  watch <session-id>           follow a session's event stream
  gate <session-id> <continue|exit>
  report <report-id>           print a report
`;

export async function main(argv: string[]): Promise<number> {
  const [baseUrl, command, ...args] = argv;
  if (!baseUrl || !command) {
    process.stderr.write(USAGE);
    return 2;
  }
  const client = new ConsoleClient(baseUrl);
  try {
    switch (command) {
      case "runs": {
        for (const run of await client.listRuns()) {
          console.log(`${run.run_id}  ${run.kind}  ${run.status}`);
        }
        return 0;
      }
      case "launch": {
        const result = await client.launchRun(args[0], args[1]);
        console.log(`run ${result.run_id} session ${result.session_id}`);
        return 0;
      }
      case "watch": {
        for await (const event of subscribeEvents(client, args[0])) {
          console.log(renderEvent(event));
        }
        return 0;
      }
      case "gate": {
        const result = await client.submitGate(
          args[0],
          args[1] as "continue" | "exit",
        );
        console.log(`${result.status}: ${result.decision}`);
        return 0;
      }
      case "report": {
        for (const line of renderReport(await client.getReport(args[0]))) {
          console.log(line);
        }
        return 0;
      }
      default:
        process.stderr.write(USAGE);
        return 2;
    }
  } catch (error) {
    if (error instanceof GateConflictError) {
      console.error(`gate conflict: ${error.message}`);
      return 1;
    }
    if (error instanceof ServiceError) {
      console.error(`service error: ${error.message}`);
      return 1;
    }
    throw error;
  }
}

const entry = process.argv[1] ?? "";
if (entry.endsWith("index.js")) {
  main(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
