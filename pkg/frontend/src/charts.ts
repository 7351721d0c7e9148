// Per-joint strip charts: fixed-capacity ring buffers drawn as polylines.

export class StripBuffer {
  private t: number[] = [];
  private v: number[][] = [];

  constructor(readonly capacity: number, readonly channels: number) {}

  push(t: number, values: number[]): void {
    if (values.length !== this.channels) {
      throw new Error(`expected ${this.channels} values`);
    }
    this.t.push(t);
    this.v.push(values.slice());
    if (this.t.length > this.capacity) {
      this.t.shift();
      this.v.shift();
    }
  }

  get length(): number {
    return this.t.length;
  }

  series(channel: number): { t: number[]; y: number[] } {
    return { t: this.t.slice(), y: this.v.map((row) => row[channel]) };
  }

  clear(): void {
    this.t = [];
    this.v = [];
  }
}

export function drawStrips(
  ctx: CanvasRenderingContext2D,
  buf: StripBuffer,
  width: number,
  height: number,
  yMin = -0.4,
  yMax = 2.0,
): void {
  ctx.clearRect(0, 0, width, height);
  if (buf.length < 2) return;
  const rows = buf.channels;
  const rowH = height / rows;
  const t0 = buf.series(0).t[0];
  const t1 = buf.series(0).t[buf.length - 1];
  const span = Math.max(t1 - t0, 1e-9);
  for (let c = 0; c < rows; c++) {
    const { t, y } = buf.series(c);
    const top = c * rowH;
    ctx.strokeStyle = "#333";
    ctx.lineWidth = 1;
    ctx.strokeRect(0, top, width, rowH);
    ctx.strokeStyle = `hsl(${(c * 67) % 360}, 70%, 55%)`;
    ctx.beginPath();
    for (let i = 0; i < t.length; i++) {
      const x = ((t[i] - t0) / span) * width;
      const yy = top + rowH - ((y[i] - yMin) / (yMax - yMin)) * rowH;
      if (i === 0) ctx.moveTo(x, yy);
      else ctx.lineTo(x, yy);
    }
    ctx.stroke();
  }
}
