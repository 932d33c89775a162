// The gateway's event stream uses "event:"/"data:" framing with a Bearer
// header, which EventSource cannot send -- so the console streams over fetch
// and parses frames itself, reconnecting with backoff on disconnect.

export interface SseFrame {
  event: string;
  data: string;
}

/** Incremental parser; feed() returns every complete frame in the chunk. */
export class SseParser {
  private buffer = "";

  feed(chunk: string): SseFrame[] {
    this.buffer += chunk.replace(/\r\n/g, "\n");
    const frames: SseFrame[] = [];
    let boundary = this.buffer.indexOf("\n\n");
    while (boundary >= 0) {
      const raw = this.buffer.slice(0, boundary);
      this.buffer = this.buffer.slice(boundary + 2);
      const frame = parseFrame(raw);
      if (frame) frames.push(frame);
      boundary = this.buffer.indexOf("\n\n");
    }
    return frames;
  }
}

function parseFrame(raw: string): SseFrame | null {
  let event = "message";
  const data: string[] = [];
  for (const line of raw.split("\n")) {
    if (!line || line.startsWith(":")) continue; // comments/keepalives
    if (line.startsWith("event:")) event = line.slice(6).trim();
    else if (line.startsWith("data:")) data.push(line.slice(5).trimStart());
  }
  if (data.length === 0) return null;
  return { event, data: data.join("\n") };
}

export interface EventStreamOptions {
  headers: Record<string, string>;
  onFrame: (frame: SseFrame) => void;
  onStateChange?: (state: "connecting" | "live" | "offline") => void;
  fetchImpl?: typeof fetch;
  initialBackoffMs?: number;
  maxBackoffMs?: number;
}

/** Long-lived subscription with automatic reconnect (journal replay on the
 * server makes reconnects lossless for undecided approvals). */
export class EventStream {
  private stopped = false;
  private controller: AbortController | null = null;
  private backoff: number;

  constructor(private readonly url: string, private readonly options: EventStreamOptions) {
    this.backoff = options.initialBackoffMs ?? 500;
  }

  start(): void {
    void this.runLoop();
  }

  stop(): void {
    this.stopped = true;
    this.controller?.abort();
  }

  private async runLoop(): Promise<void> {
    const fetchImpl = this.options.fetchImpl ?? fetch;
    while (!this.stopped) {
      this.options.onStateChange?.("connecting");
      this.controller = new AbortController();
      try {
        const response = await fetchImpl(this.url, {
          headers: this.options.headers,
          signal: this.controller.signal,
        });
        if (!response.ok || !response.body) throw new Error(`stream status ${response.status}`);
        this.options.onStateChange?.("live");
        this.backoff = this.options.initialBackoffMs ?? 500;

        const reader = response.body.getReader();
        const decoder = new TextDecoder();
        const parser = new SseParser();
        for (;;) {
          const { value, done } = await reader.read();
          if (done) break;
          for (const frame of parser.feed(decoder.decode(value, { stream: true }))) {
            this.options.onFrame(frame);
          }
        }
      } catch {
        // fall through to reconnect
      }
      if (this.stopped) return;
      this.options.onStateChange?.("offline");
      await sleep(this.backoff);
      this.backoff = Math.min(this.backoff * 2, this.options.maxBackoffMs ?? 8000);
    }
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
