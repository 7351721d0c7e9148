// Websocket client with reconnect and FIFO command/ack correlation.
// The bridge answers every command with exactly one ack on the same
// connection, in order, so a resolver queue pairs them up; pending
// commands are rejected on disconnect.

import { Command, parseEvent } from "./protocol.js";
import { DashboardState } from "./state.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  readyState: number;
}

export type SocketFactory = (url: string) => SocketLike;

export interface ClientOptions {
  url: string;
  socketFactory?: SocketFactory;
  reconnectBaseMs?: number;
  reconnectMaxMs?: number;
  onStatus?: (connected: boolean) => void;
}

const OPEN = 1;

export class DashboardClient {
  readonly state = new DashboardState();
  private ws: SocketLike | null = null;
  private pending: Array<{
    resolve: (ack: unknown) => void;
    reject: (err: Error) => void;
  }> = [];
  private attempts = 0;
  private closed = false;
  private readonly factory: SocketFactory;

  constructor(private readonly options: ClientOptions) {
    this.factory = options.socketFactory ??
      ((url) => new WebSocket(url) as unknown as SocketLike);
  }

  connect(): void {
    this.closed = false;
    this.open();
  }

  private open(): void {
    const ws = this.factory(this.options.url);
    this.ws = ws;
    ws.onopen = () => {
      this.attempts = 0;
      this.state.connected = true;
      this.options.onStatus?.(true);
    };
    ws.onmessage = (ev) => this.onRaw(String(ev.data));
    ws.onerror = () => undefined;
    ws.onclose = () => {
      this.state.connected = false;
      this.options.onStatus?.(false);
      this.failPending(new Error("connection closed"));
      if (!this.closed) this.scheduleReconnect();
    };
  }

  private scheduleReconnect(): void {
    const base = this.options.reconnectBaseMs ?? 500;
    const cap = this.options.reconnectMaxMs ?? 10_000;
    const wait = Math.min(base * 2 ** this.attempts, cap);
    this.attempts += 1;
    setTimeout(() => {
      if (!this.closed) this.open();
    }, wait);
  }

  private onRaw(raw: string): void {
    const parsed = parseEvent(raw);
    if (!parsed.ok) {
      this.state.onMalformed();
      return;
    }
    if (parsed.event.type === "ack") {
      const waiter = this.pending.shift();
      waiter?.resolve(parsed.event);
    }
    this.state.onEvent(parsed.event);
  }

  /** Send a command; resolves with its (single) ack. */
  send(cmd: Command, timeoutMs = 30_000): Promise<unknown> {
    const ws = this.ws;
    if (!ws || ws.readyState !== OPEN) {
      return Promise.reject(new Error("not connected"));
    }
    return new Promise((resolve, reject) => {
      const entry = { resolve, reject };
      this.pending.push(entry);
      const timer = setTimeout(() => {
        const idx = this.pending.indexOf(entry);
        if (idx >= 0) {
          this.pending.splice(idx, 1);
          reject(new Error("ack timeout"));
        }
      }, timeoutMs);
      const wrapped = (ack: unknown) => {
        clearTimeout(timer);
        resolve(ack);
      };
      entry.resolve = wrapped;
      ws.send(JSON.stringify(cmd));
    });
  }

  private failPending(err: Error): void {
    for (const p of this.pending.splice(0)) p.reject(err);
  }

  close(): void {
    this.closed = true;
    this.failPending(new Error("client closed"));
    this.ws?.close();
  }
}
