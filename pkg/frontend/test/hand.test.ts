import { describe, expect, it } from "vitest";
import { fingerChain, handGeometry } from "../src/hand.js";

const zeros = new Array(20).fill(0);

function segmentAngle(a: { x: number; y: number },
                      b: { x: number; y: number }): number {
  return Math.atan2(b.y - a.y, b.x - a.x);
}

describe("hand geometry", () => {
  it("zero pose gives straight fingers", () => {
    for (const chain of handGeometry(zeros)) {
      const { joints } = chain;
      const a0 = segmentAngle(joints[0], joints[1]);
      const a1 = segmentAngle(joints[1], joints[2]);
      const a2 = segmentAngle(joints[2], joints[3]);
      expect(a1).toBeCloseTo(a0, 9);
      expect(a2).toBeCloseTo(a0, 9);
    }
  });

  it("base flexion rotates the whole chain toward the palm", () => {
    const angles = zeros.slice();
    angles[4 * 1] = Math.PI / 2; // index base flexion
    const straight = fingerChain(zeros, 1);
    const bent = fingerChain(angles, 1);
    const a0 = segmentAngle(straight.joints[0], straight.joints[1]);
    const b0 = segmentAngle(bent.joints[0], bent.joints[1]);
    expect(a0 - b0).toBeCloseTo(Math.PI / 2, 9);
  });

  it("abduction fans the base direction the other way", () => {
    const angles = zeros.slice();
    angles[4 * 2 + 1] = 0.3; // middle finger abduction
    const fanned = fingerChain(angles, 2);
    const straight = fingerChain(zeros, 2);
    const da = segmentAngle(fanned.joints[0], fanned.joints[1]) -
      segmentAngle(straight.joints[0], straight.joints[1]);
    expect(da).toBeCloseTo(0.3, 9);
  });

  it("curling shortens the reach", () => {
    const angles = zeros.slice();
    angles[4 * 1] = 1.2;
    angles[4 * 1 + 2] = 1.2;
    angles[4 * 1 + 3] = 1.2;
    const dist = (c: ReturnType<typeof fingerChain>) => {
      const tip = c.joints[3];
      const base = c.joints[0];
      return Math.hypot(tip.x - base.x, tip.y - base.y);
    };
    expect(dist(fingerChain(angles, 1))).toBeLessThan(
      dist(fingerChain(zeros, 1)));
  });

  it("rejects malformed inputs", () => {
    expect(() => handGeometry([1, 2, 3])).toThrow();
    const bad = zeros.slice();
    bad[5] = Number.NaN;
    expect(() => handGeometry(bad)).toThrow();
  });
});
