// Server-sent-events reader over fetch streaming. EventSource is not
// available under node, and fetch streams work in both the browser and the
// integration tests, so the parser lives here and stays pure.

export interface SseEvent {
  event: string;
  data: string;
}

export class SseParser {
  private buffer = "";
  private eventName = "";
  private dataLines: string[] = [];

  /** Feed a raw chunk; returns any events completed by it. */
  push(chunk: string): SseEvent[] {
    this.buffer += chunk;
    const events: SseEvent[] = [];
    for (;;) {
      const nl = this.buffer.indexOf("\n");
      if (nl < 0) break;
      const line = this.buffer.slice(0, nl).replace(/\r$/, "");
      this.buffer = this.buffer.slice(nl + 1);
      if (line === "") {
        if (this.dataLines.length > 0) {
          events.push({
            event: this.eventName || "message",
            data: this.dataLines.join("\n"),
          });
        }
        this.eventName = "";
        this.dataLines = [];
      } else if (line.startsWith(":")) {
        // comment / keepalive
      } else if (line.startsWith("event:")) {
        this.eventName = line.slice(6).trim();
      } else if (line.startsWith("data:")) {
        this.dataLines.push(line.slice(5).trimStart());
      }
    }
    return events;
  }
}

export interface StreamHandle {
  close(): void;
  done: Promise<void>;
}

export function openEventStream(
  url: string,
  onEvent: (ev: SseEvent) => void,
  onError: (err: unknown) => void,
  fetchFn: typeof fetch = fetch,
): StreamHandle {
  const controller = new AbortController();
  const done = (async () => {
    const resp = await fetchFn(url, {
      signal: controller.signal,
      headers: { accept: "text/event-stream" },
    });
    if (!resp.ok || !resp.body) throw new Error(`stream failed: ${resp.status}`);
    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    const parser = new SseParser();
    for (;;) {
      const { value, done: finished } = await reader.read();
      if (finished) break;
      for (const ev of parser.push(decoder.decode(value, { stream: true }))) {
        onEvent(ev);
      }
    }
  })().catch((err) => {
    if (!controller.signal.aborted) onError(err);
  });
  return { close: () => controller.abort(), done };
}
