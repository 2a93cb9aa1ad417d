import type { SessionEvent } from "./types.js";
import type { ConsoleClient } from "./client.js";

const TERMINAL_STATUSES = new Set([
  "succeeded",
  "exhausted",
  "terminated-by-admin",
  "failed",
]);

export function isTerminalEvent(event: SessionEvent): boolean {
  return (
    event.type === "status-change" &&
    TERMINAL_STATUSES.has(String(event.payload["status"]))
  );
}

/** Split a newline-delimited JSON byte stream into events, keeping any
 * trailing partial line buffered between chunks. */
export async function* parseNdjson(
  stream: AsyncIterable<Uint8Array>,
): AsyncGenerator<SessionEvent> {
  const decoder = new TextDecoder();
  let buffer = "";
  for await (const chunk of stream) {
    buffer += decoder.decode(chunk, { stream: true });
    let newline: number;
    while ((newline = buffer.indexOf("\n")) >= 0) {
      const line = buffer.slice(0, newline).trim();
      buffer = buffer.slice(newline + 1);
      if (line) {
        yield JSON.parse(line) as SessionEvent;
      }
    }
  }
  const tail = buffer.trim();
  if (tail) {
    yield JSON.parse(tail) as SessionEvent;
  }
}

export interface SubscribeOptions {
  cursor?: number;
  /** Delay before reconnecting after a dropped stream. */
  retryMs?: number;
  /** Give up after this many consecutive failed connections. */
  maxRetries?: number;
}

/** Follow a session's event stream to its terminal status-change.
 *
 * The subscription survives connection drops: it reconnects from the
 * last event_seq it has seen, so no event is delivered twice and none
 * is skipped.
 */
export async function* subscribeEvents(
  client: ConsoleClient,
  sessionId: string,
  options: SubscribeOptions = {},
): AsyncGenerator<SessionEvent> {
  let cursor = options.cursor ?? 0;
  const retryMs = options.retryMs ?? 250;
  const maxRetries = options.maxRetries ?? 10;
  let failures = 0;

  for (;;) {
    let response: Response;
    try {
      response = await fetch(client.eventsUrl(sessionId, cursor));
    } catch (error) {
      if (++failures > maxRetries) throw error;
      await sleep(retryMs);
      continue;
    }
    if (!response.ok || response.body === null) {
      if (++failures > maxRetries) {
        throw new Error(`event stream failed with ${response.status}`);
      }
      await sleep(retryMs);
      continue;
    }
    failures = 0;
    let delivered = false;
    let dropped = false;
    try {
      for await (const event of parseNdjson(iterateBody(response.body))) {
        if (event.event_seq <= cursor) continue; // replayed after a drop
        cursor = event.event_seq;
        delivered = true;
        yield event;
        if (isTerminalEvent(event)) return;
      }
    } catch {
      dropped = true; // connection lost mid-stream; reconnect from cursor
    }
    if (!delivered && !dropped) {
      // A clean end with nothing new means the session is fully
      // persisted; there is no terminal event left to wait for.
      return;
    }
    await sleep(retryMs);
  }
}

async function* iterateBody(
  body: ReadableStream<Uint8Array>,
): AsyncIterable<Uint8Array> {
  const reader = body.getReader();
  try {
    for (;;) {
      const { done, value } = await reader.read();
      if (done) return;
      if (value) yield value;
    }
  } finally {
    reader.releaseLock();
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
