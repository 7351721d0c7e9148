// Latest-value slots per event type plus frame accounting. Rendering is
// decoupled from receipt: the render loop samples the newest pose and
// anything overwritten in between is counted as dropped, never queued.

import {
  AckEvent,
  BridgeEvent,
  GestureStateEvent,
  MetricsEvent,
  PoseEvent,
} from "./protocol.js";

export interface FrameAccounting {
  received: number;
  rendered: number;
  dropped: number;
  malformed: number;
}

const RATE_WINDOW = 50;

export class DashboardState {
  pose: PoseEvent | null = null;
  metrics: MetricsEvent | null = null;
  gesture: GestureStateEvent | null = null;
  modelVersion = 0;
  knownVersions: number[] = [];
  connected = false;

  received = 0;
  rendered = 0;
  malformed = 0;
  private renderedAtLastSample = 0;
  private consumedReceived = 0;
  private poseTimes: number[] = [];

  onEvent(ev: BridgeEvent): void {
    switch (ev.type) {
      case "pose":
        this.pose = ev;
        this.received += 1;
        this.poseTimes.push(ev.t);
        if (this.poseTimes.length > RATE_WINDOW) this.poseTimes.shift();
        if (typeof ev.v === "number") this.noteVersion(ev.v);
        break;
      case "metrics":
        this.metrics = ev;
        break;
      case "model_version":
        this.noteVersion(ev.v);
        this.modelVersion = ev.v;
        break;
      case "gesture_state":
        this.gesture = ev;
        break;
      case "ack":
        this.onAck(ev);
        break;
    }
  }

  onMalformed(): void {
    this.malformed += 1;
  }

  private onAck(ack: AckEvent): void {
    if (typeof ack.v === "number" && ack.ok) {
      this.noteVersion(ack.v);
      this.modelVersion = ack.v;
    }
    if (ack.available) {
      for (const v of ack.available) this.noteVersion(v);
    }
  }

  private noteVersion(v: number): void {
    if (!this.knownVersions.includes(v)) {
      this.knownVersions.push(v);
      this.knownVersions.sort((a, b) => a - b);
    }
  }

  /** Called by the render loop; newest pose wins, the rest are dropped. */
  takeFrameForRender(): PoseEvent | null {
    if (this.received > this.consumedReceived && this.pose !== null) {
      this.consumedReceived = this.received;
      this.rendered += 1;
      return this.pose;
    }
    return null;
  }

  accounting(): FrameAccounting {
    return {
      received: this.received,
      rendered: this.rendered,
      dropped: this.received - this.rendered,
      malformed: this.malformed,
    };
  }

  /** Nominal incoming pose rate in Hz from event timestamps. */
  poseRateHz(): number {
    if (this.poseTimes.length < 2) return 0;
    const span = this.poseTimes[this.poseTimes.length - 1] - this.poseTimes[0];
    return span > 0 ? (this.poseTimes.length - 1) / span : 0;
  }
}
