// 2-D articulated hand from the 20 joint angles: per finger
// [base-flexion, base-abduction, mid-flexion, tip-flexion]. Flexion curls
// the chain toward the palm, abduction fans the base direction sideways.

export const FINGERS = ["thumb", "index", "middle", "ring", "little"] as const;

export interface Point {
  x: number;
  y: number;
}

export interface FingerGeometry {
  joints: Point[]; // base, after-MCP, after-PIP, tip: 4 points
}

// palm-frame layout (unitless; y up): base anchors along the palm edge
const BASE_X = [-0.95, -0.45, 0.0, 0.45, 0.9];
const BASE_Y = [0.15, 0.55, 0.62, 0.55, 0.42];
const BASE_DIR = [2.55, 1.75, 1.57, 1.35, 1.05]; // radians, ~up and fanned
const SEG_LEN: Record<number, number[]> = {
  0: [0.45, 0.32, 0.22],
  1: [0.5, 0.32, 0.22],
  2: [0.55, 0.35, 0.24],
  3: [0.5, 0.32, 0.22],
  4: [0.4, 0.26, 0.18],
};

export function fingerChain(angles: number[], finger: number): FingerGeometry {
  const [baseFlex, baseAbd, midFlex, tipFlex] = [
    angles[4 * finger],
    angles[4 * finger + 1],
    angles[4 * finger + 2],
    angles[4 * finger + 3],
  ];
  const lens = SEG_LEN[finger];
  const joints: Point[] = [{ x: BASE_X[finger], y: BASE_Y[finger] }];
  // abduction fans the whole chain; flexion accumulates segment by segment
  let dir = BASE_DIR[finger] + baseAbd;
  const flex = [baseFlex, midFlex, tipFlex];
  for (let s = 0; s < 3; s++) {
    dir -= flex[s];
    const prev = joints[joints.length - 1];
    joints.push({
      x: prev.x + lens[s] * Math.cos(dir),
      y: prev.y + lens[s] * Math.sin(dir),
    });
  }
  return { joints };
}

export function handGeometry(angles: number[]): FingerGeometry[] {
  if (angles.length !== 20 || !angles.every(Number.isFinite)) {
    throw new Error("hand geometry needs 20 finite angles");
  }
  return FINGERS.map((_, f) => fingerChain(angles, f));
}

export interface DrawOptions {
  width: number;
  height: number;
  lineWidth?: number;
  color?: string;
  jointRadius?: number;
}

export function drawHand(
  ctx: CanvasRenderingContext2D,
  angles: number[],
  options: DrawOptions,
): void {
  const { width, height, lineWidth = 3, color = "#4dd0e1",
          jointRadius = 3 } = options;
  const scale = Math.min(width, height) / 3.2;
  const ox = width / 2;
  const oy = height * 0.72;
  const px = (p: Point) => ox + p.x * scale;
  const py = (p: Point) => oy - p.y * scale;

  ctx.clearRect(0, 0, width, height);
  // palm outline
  ctx.strokeStyle = "#888";
  ctx.lineWidth = 2;
  ctx.beginPath();
  const palm = [
    { x: -1.0, y: 0.1 }, { x: -0.5, y: 0.5 }, { x: 0.5, y: 0.5 },
    { x: 1.0, y: 0.35 }, { x: 0.8, y: -0.6 }, { x: -0.6, y: -0.6 },
  ];
  palm.forEach((p, i) => (i ? ctx.lineTo(px(p), py(p))
                            : ctx.moveTo(px(p), py(p))));
  ctx.closePath();
  ctx.stroke();

  const chains = handGeometry(angles);
  ctx.strokeStyle = color;
  ctx.fillStyle = color;
  ctx.lineWidth = lineWidth;
  for (const { joints } of chains) {
    ctx.beginPath();
    ctx.moveTo(px(joints[0]), py(joints[0]));
    for (const p of joints.slice(1)) ctx.lineTo(px(p), py(p));
    ctx.stroke();
    for (const p of joints) {
      ctx.beginPath();
      ctx.arc(px(p), py(p), jointRadius, 0, 2 * Math.PI);
      ctx.fill();
    }
  }
}
