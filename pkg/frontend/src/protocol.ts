// JSON message contract with the demo bridge (ws://host:7343/ws).
// Events flow in; commands flow out and each yields exactly one ack.

export const N_ANGLES = 20;

export interface PoseEvent {
  type: "pose";
  t: number;
  angles: number[];
  v?: number;
}

export interface MetricsEvent {
  type: "metrics";
  t: number;
  error_deg: number;
  window_count?: number;
  buffered_pairs?: number;
}

export interface ModelVersionEvent {
  type: "model_version";
  v: number;
}

export interface GestureStateEvent {
  type: "gesture_state";
  id: number | null;
  active: boolean;
}

export interface AckEvent {
  type: "ack";
  cmd?: string;
  ok: boolean;
  v?: number;
  id?: number;
  alpha?: number;
  noop?: boolean;
  error?: string;
  available?: number[];
}

export type BridgeEvent =
  | PoseEvent
  | MetricsEvent
  | ModelVersionEvent
  | GestureStateEvent
  | AckEvent;

export type Command =
  | { type: "finetune_now" }
  | { type: "swap_model"; v: number }
  | { type: "start_gesture"; id: number }
  | { type: "stop_gesture" }
  | { type: "set_alpha"; alpha: number };

export type ParseResult =
  | { ok: true; event: BridgeEvent }
  | { ok: false; error: string };

function finite(x: unknown): x is number {
  return typeof x === "number" && Number.isFinite(x);
}

export function parseEvent(raw: string): ParseResult {
  let doc: unknown;
  try {
    doc = JSON.parse(raw);
  } catch (err) {
    return { ok: false, error: `not JSON: ${err}` };
  }
  if (typeof doc !== "object" || doc === null) {
    return { ok: false, error: "event is not an object" };
  }
  const ev = doc as Record<string, unknown>;
  switch (ev.type) {
    case "pose": {
      if (!finite(ev.t)) return { ok: false, error: "pose missing t" };
      const angles = ev.angles;
      if (!Array.isArray(angles) || angles.length !== N_ANGLES ||
          !angles.every(finite)) {
        return { ok: false, error: "pose needs 20 finite angles" };
      }
      return { ok: true, event: ev as unknown as PoseEvent };
    }
    case "metrics": {
      if (!finite(ev.t) || !finite(ev.error_deg)) {
        return { ok: false, error: "metrics needs finite t and error_deg" };
      }
      return { ok: true, event: ev as unknown as MetricsEvent };
    }
    case "model_version": {
      if (!Number.isInteger(ev.v)) {
        return { ok: false, error: "model_version needs integer v" };
      }
      return { ok: true, event: ev as unknown as ModelVersionEvent };
    }
    case "gesture_state": {
      if (ev.id !== null && !Number.isInteger(ev.id)) {
        return { ok: false, error: "gesture_state id must be int or null" };
      }
      return { ok: true, event: ev as unknown as GestureStateEvent };
    }
    case "ack": {
      if (typeof ev.ok !== "boolean") {
        return { ok: false, error: "ack needs boolean ok" };
      }
      return { ok: true, event: ev as unknown as AckEvent };
    }
    default:
      return { ok: false, error: `unknown event type ${String(ev.type)}` };
  }
}
