// Client behaviour against an in-process websocket server (node 'ws').

import { afterEach, beforeEach, describe, expect, it } from "vitest";
import { AddressInfo } from "node:net";
import { WebSocket, WebSocketServer } from "ws";
import { DashboardClient } from "../src/client.js";
import { AckEvent } from "../src/protocol.js";

let server: WebSocketServer;
let url: string;
let sockets: WebSocket[] = [];

function wsFactory(u: string) {
  const ws = new WebSocket(u);
  sockets.push(ws);
  return ws as unknown as import("../src/client.js").SocketLike;
}

beforeEach(async () => {
  server = new WebSocketServer({ port: 0 });
  await new Promise<void>((res) => server.on("listening", () => res()));
  const port = (server.address() as AddressInfo).port;
  url = `ws://127.0.0.1:${port}/ws`;
});

afterEach(() => {
  for (const s of sockets) s.close();
  sockets = [];
  server.close();
});

function connected(client: DashboardClient): Promise<void> {
  return new Promise((res) => {
    const tick = () => (client.state.connected ? res() : setTimeout(tick, 5));
    tick();
  });
}

describe("DashboardClient", () => {
  it("dispatches events into state and counts malformed ones", async () => {
    server.on("connection", (conn) => {
      conn.send(JSON.stringify({ type: "pose", t: 0.04,
                                 angles: new Array(20).fill(0) }));
      conn.send("not json");
      conn.send(JSON.stringify({ type: "model_version", v: 7 }));
    });
    const client = new DashboardClient({ url, socketFactory: wsFactory });
    client.connect();
    await connected(client);
    await new Promise((r) => setTimeout(r, 100));
    expect(client.state.received).toBe(1);
    expect(client.state.malformed).toBe(1);
    expect(client.state.modelVersion).toBe(7);
    client.close();
  });

  it("resolves each command with exactly one ack, in order", async () => {
    server.on("connection", (conn) => {
      conn.on("message", (raw) => {
        const cmd = JSON.parse(String(raw));
        conn.send(JSON.stringify({ type: "ack", cmd: cmd.type, ok: true,
                                   v: cmd.type === "finetune_now" ? 1 : 0 }));
      });
    });
    const client = new DashboardClient({ url, socketFactory: wsFactory });
    client.connect();
    await connected(client);
    const [a, b] = (await Promise.all([
      client.send({ type: "finetune_now" }),
      client.send({ type: "stop_gesture" }),
    ])) as AckEvent[];
    expect(a.cmd).toBe("finetune_now");
    expect(a.v).toBe(1);
    expect(b.cmd).toBe("stop_gesture");
    client.close();
  });

  it("rejects pending commands when the connection drops", async () => {
    server.on("connection", (conn) => {
      conn.on("message", () => conn.terminate());
    });
    const client = new DashboardClient({ url, socketFactory: wsFactory,
                                         reconnectBaseMs: 10_000 });
    client.connect();
    await connected(client);
    await expect(client.send({ type: "finetune_now" })).rejects.toThrow();
    client.close();
  });

  it("refuses to send while disconnected", async () => {
    const client = new DashboardClient({ url, socketFactory: wsFactory });
    await expect(client.send({ type: "stop_gesture" })).rejects
      .toThrow(/not connected/);
  });

  it("reconnects after a server-side close", async () => {
    let drops = 0;
    server.on("connection", (conn) => {
      if (drops === 0) {
        drops += 1;
        conn.terminate();
      }
    });
    const client = new DashboardClient({ url, socketFactory: wsFactory,
                                         reconnectBaseMs: 20 });
    client.connect();
    const deadline = Date.now() + 5000;
    while (Date.now() < deadline) {
      if (client.state.connected && drops === 1) break;
      await new Promise((r) => setTimeout(r, 10));
    }
    expect(client.state.connected).toBe(true);
    client.close();
  });
});
