// API and stream clients. Both take their transports via injection so the
// reconnect/de-dup logic is testable without a browser or a server.

import { SessionEvent, SessionView } from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface ReportResult {
  ok: boolean;
  fieldErrors: Record<string, string>;
  view: SessionView | null;
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = fetch.bind(globalThis),
  ) {}

  async createSession(topic: string): Promise<SessionView> {
    const response = await this.fetchFn(`${this.baseUrl}/sessions`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ topic }),
    });
    if (!response.ok) throw new Error(`create failed: ${response.status}`);
    return (await response.json()) as SessionView;
  }

  async getSession(sessionId: string): Promise<SessionView> {
    const response = await this.fetchFn(`${this.baseUrl}/sessions/${sessionId}`);
    if (!response.ok) throw new Error(`session fetch failed: ${response.status}`);
    return (await response.json()) as SessionView;
  }

  async getEvents(sessionId: string): Promise<SessionEvent[]> {
    const response = await this.fetchFn(`${this.baseUrl}/sessions/${sessionId}/events`);
    if (!response.ok) throw new Error(`events fetch failed: ${response.status}`);
    const body = (await response.json()) as { events: SessionEvent[] };
    return body.events;
  }

  async sendMessage(sessionId: string, text: string): Promise<void> {
    const response = await this.fetchFn(`${this.baseUrl}/sessions/${sessionId}/messages`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ text }),
    });
    if (!response.ok) throw new Error(`send failed: ${response.status}`);
  }

  // 400 responses carry {"errors": {field: message}} for inline rendering.
  async submitReport(sessionId: string, draft: Record<string, string>): Promise<ReportResult> {
    const response = await this.fetchFn(`${this.baseUrl}/sessions/${sessionId}/report`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(draft),
    });
    if (response.status === 400) {
      const body = (await response.json()) as { errors?: Record<string, string> };
      return { ok: false, fieldErrors: body.errors ?? {}, view: null };
    }
    if (!response.ok) throw new Error(`report failed: ${response.status}`);
    return { ok: true, fieldErrors: {}, view: (await response.json()) as SessionView };
  }
}

// Minimal WebSocket surface so tests can fake sockets.
export interface SocketLike {
  onopen: (() => void) | null;
  onmessage: ((event: { data: string }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
  close(): void;
}

export type SocketFactory = (url: string) => SocketLike;

export interface StreamCallbacks {
  onEvent: (event: SessionEvent) => void;
  onStatus: (status: "connecting" | "open" | "closed") => void;
}

// Streams session events in seq order, resuming after drops. Resume works by
// reconnecting with ?from_seq=<last seen>, so the server replays nothing the
// client already holds; anything duplicated anyway is dropped by seq here.
export class StreamClient {
  private lastSeq = 0;
  private socket: SocketLike | null = null;
  private stopped = false;
  private reconnectDelayMs: number;

  constructor(
    private readonly wsBaseUrl: string,
    private readonly sessionId: string,
    private readonly callbacks: StreamCallbacks,
    private readonly socketFactory: SocketFactory,
    private readonly options: { reconnectDelayMs?: number; schedule?: (fn: () => void, ms: number) => void } = {},
  ) {
    this.reconnectDelayMs = options.reconnectDelayMs ?? 500;
  }

  get lastSeenSeq(): number {
    return this.lastSeq;
  }

  start(fromSeq = 0): void {
    this.lastSeq = Math.max(this.lastSeq, fromSeq);
    this.open();
  }

  stop(): void {
    this.stopped = true;
    this.socket?.close();
  }

  private open(): void {
    this.callbacks.onStatus("connecting");
    const url = `${this.wsBaseUrl}/sessions/${this.sessionId}/stream?from_seq=${this.lastSeq}`;
    const socket = this.socketFactory(url);
    this.socket = socket;
    socket.onopen = () => this.callbacks.onStatus("open");
    socket.onmessage = (event) => {
      const parsed = JSON.parse(event.data) as SessionEvent;
      if (parsed.seq <= this.lastSeq) return; // overlap after resume
      this.lastSeq = parsed.seq;
      this.callbacks.onEvent(parsed);
    };
    socket.onerror = () => socket.close();
    socket.onclose = () => {
      if (this.stopped) return;
      this.callbacks.onStatus("closed");
      const schedule = this.options.schedule ?? ((fn, ms) => setTimeout(fn, ms));
      schedule(() => {
        if (!this.stopped) this.open();
      }, this.reconnectDelayMs);
    };
  }
}
