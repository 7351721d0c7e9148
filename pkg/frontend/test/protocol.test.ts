import { describe, expect, it } from "vitest";
import { parseEvent } from "../src/protocol.js";

const pose = (angles: number[]) =>
  JSON.stringify({ type: "pose", t: 1.0, angles });

describe("parseEvent", () => {
  it("accepts a valid pose", () => {
    const res = parseEvent(pose(new Array(20).fill(0.1)));
    expect(res.ok).toBe(true);
    if (res.ok && res.event.type === "pose") {
      expect(res.event.angles).toHaveLength(20);
    }
  });

  it("rejects wrong angle count", () => {
    expect(parseEvent(pose([1, 2, 3])).ok).toBe(false);
  });

  it("rejects non-finite angles", () => {
    const raw = pose(new Array(20).fill(0)).replace("0,0", "null,0");
    expect(parseEvent(raw).ok).toBe(false);
  });

  it("rejects non-JSON", () => {
    expect(parseEvent("garbage{").ok).toBe(false);
  });

  it("rejects unknown types", () => {
    expect(parseEvent(JSON.stringify({ type: "mystery" })).ok).toBe(false);
  });

  it("accepts model_version and gesture_state", () => {
    expect(parseEvent(JSON.stringify({ type: "model_version", v: 3 })).ok)
      .toBe(true);
    expect(parseEvent(JSON.stringify({ type: "model_version", v: 1.5 })).ok)
      .toBe(false);
    expect(parseEvent(JSON.stringify(
      { type: "gesture_state", id: null, active: false })).ok).toBe(true);
  });

  it("accepts acks with and without payloads", () => {
    expect(parseEvent(JSON.stringify({ type: "ack", ok: true, v: 2 })).ok)
      .toBe(true);
    expect(parseEvent(JSON.stringify({ type: "ack" })).ok).toBe(false);
  });

  it("accepts metrics", () => {
    expect(parseEvent(JSON.stringify(
      { type: "metrics", t: 2.5, error_deg: 11.2 })).ok).toBe(true);
  });
});
