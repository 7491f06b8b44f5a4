import { describe, expect, it } from "vitest";

import events50 from "./fixtures/events_50.json";
import { ApiClient, SocketLike, StreamClient } from "../src/client.js";
import { SessionEvent } from "../src/types.js";

const FIXTURE = events50 as SessionEvent[];

// A scriptable fake socket: the test decides which events each connection
// delivers and when it drops.
class FakeSocket implements SocketLike {
  onopen: (() => void) | null = null;
  onmessage: ((event: { data: string }) => void) | null = null;
  onclose: (() => void) | null = null;
  onerror: (() => void) | null = null;
  closed = false;

  constructor(public readonly url: string) {}

  open(): void {
    this.onopen?.();
  }

  deliver(events: SessionEvent[]): void {
    for (const event of events) {
      this.onmessage?.({ data: JSON.stringify(event) });
    }
  }

  drop(): void {
    this.close();
  }

  close(): void {
    if (!this.closed) {
      this.closed = true;
      this.onclose?.();
    }
  }
}

function fromSeqOf(url: string): number {
  return Number(new URL(url, "http://x").searchParams.get("from_seq"));
}

describe("StreamClient reconnect", () => {
  it("resumes from the last seen seq and never forwards duplicates", () => {
    const sockets: FakeSocket[] = [];
    const received: SessionEvent[] = [];
    const statuses: string[] = [];
    const pendingReconnects: Array<() => void> = [];

    const client = new StreamClient(
      "ws://test",
      "sess-1",
      {
        onEvent: (event) => received.push(event),
        onStatus: (status) => statuses.push(status),
      },
      (url) => {
        const socket = new FakeSocket(url);
        sockets.push(socket);
        return socket;
      },
      { schedule: (fn) => pendingReconnects.push(fn) },
    );

    client.start();
    const first = sockets[0];
    expect(fromSeqOf(first.url)).toBe(0);
    first.open();
    first.deliver(FIXTURE.slice(0, 30));
    expect(client.lastSeenSeq).toBe(30);

    first.drop(); // connection lost mid-stream
    expect(statuses).toContain("closed");
    expect(pendingReconnects).toHaveLength(1);
    pendingReconnects.pop()!();

    const second = sockets[1];
    expect(fromSeqOf(second.url)).toBe(30); // resume point
    second.open();
    // the server replays an overlap window; the client must de-dup it
    second.deliver(FIXTURE.slice(19));

    expect(received).toHaveLength(50);
    const seqs = received.map((e) => e.seq);
    expect(seqs).toEqual(FIXTURE.map((e) => e.seq));
    expect(new Set(seqs).size).toBe(50);
  });

  it("stop() prevents further reconnects", () => {
    const sockets: FakeSocket[] = [];
    const pendingReconnects: Array<() => void> = [];
    const client = new StreamClient(
      "ws://test",
      "sess-1",
      { onEvent: () => undefined, onStatus: () => undefined },
      (url) => {
        const socket = new FakeSocket(url);
        sockets.push(socket);
        return socket;
      },
      { schedule: (fn) => pendingReconnects.push(fn) },
    );
    client.start();
    sockets[0].open();
    client.stop();
    pendingReconnects.forEach((fn) => fn());
    expect(sockets).toHaveLength(1);
  });
});

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

describe("ApiClient report submission", () => {
  it("surfaces per-field validation errors from a 400", async () => {
    const api = new ApiClient("http://test", async (url, init) => {
      expect(url).toBe("http://test/sessions/s1/report");
      expect(init?.method).toBe("POST");
      return jsonResponse(400, {
        errors: { solution_concept: "must not be empty", anticipated_challenges: "must not be empty" },
      });
    });
    const result = await api.submitReport("s1", {
      problem_background: "bg",
      solution_concept: "",
      implementation_plan: "plan",
      anticipated_challenges: "",
    });
    expect(result.ok).toBe(false);
    expect(Object.keys(result.fieldErrors).sort()).toEqual([
      "anticipated_challenges",
      "solution_concept",
    ]);
  });

  it("returns the session view on success", async () => {
    const view = { id: "s1", stage: 6, status: "completed" };
    const api = new ApiClient("http://test", async () => jsonResponse(200, view));
    const result = await api.submitReport("s1", {
      problem_background: "bg",
      solution_concept: "c",
      implementation_plan: "p",
      anticipated_challenges: "a",
    });
    expect(result.ok).toBe(true);
    expect(result.view).toMatchObject({ id: "s1", status: "completed" });
  });

  it("sendMessage posts the student text", async () => {
    const calls: Array<{ url: string; body: string }> = [];
    const api = new ApiClient("http://test", async (url, init) => {
      calls.push({ url, body: String(init?.body) });
      return jsonResponse(200, { mentor_message: {}, decision: {} });
    });
    await api.sendMessage("s1", "hello");
    expect(calls[0].url).toBe("http://test/sessions/s1/messages");
    expect(JSON.parse(calls[0].body)).toEqual({ text: "hello" });
  });
});
