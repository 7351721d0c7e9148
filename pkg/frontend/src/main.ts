// Dashboard page wiring: live hand view, strip charts, session controls.

import { DashboardClient } from "./client.js";
import { drawHand } from "./hand.js";
import { drawStrips, StripBuffer } from "./charts.js";
import { AckEvent } from "./protocol.js";

const params = new URLSearchParams(location.search);
const url = params.get("ws") ??
  `ws://${location.hostname || "127.0.0.1"}:7343/ws`;

const $ = <T extends HTMLElement>(id: string) =>
  document.getElementById(id) as T;

const handCanvas = $<HTMLCanvasElement>("hand");
const stripCanvas = $<HTMLCanvasElement>("strips");
const statusEl = $("status");
const metricsEl = $("metrics");
const versionsEl = $<HTMLSelectElement>("versions");
const logEl = $("log");

const client = new DashboardClient({
  url,
  onStatus: (up) => {
    statusEl.textContent = up ? `connected ${url}` : "reconnecting...";
    statusEl.className = up ? "ok" : "bad";
  },
});
const strips = new StripBuffer(300, 20);

function log(text: string): void {
  const line = document.createElement("div");
  line.textContent = text;
  logEl.prepend(line);
  while (logEl.childElementCount > 30) logEl.lastChild?.remove();
}

async function command(cmd: Parameters<DashboardClient["send"]>[0]) {
  try {
    const ack = (await client.send(cmd)) as AckEvent;
    log(`${cmd.type}: ${ack.ok ? "ok" : `rejected (${ack.error})`}` +
        (ack.v !== undefined ? ` v${ack.v}` : ""));
    refreshVersions();
    return ack;
  } catch (err) {
    log(`${cmd.type}: ${err}`);
    return null;
  }
}

function refreshVersions(): void {
  const st = client.state;
  const current = st.modelVersion;
  versionsEl.innerHTML = "";
  for (const v of st.knownVersions) {
    const opt = document.createElement("option");
    opt.value = String(v);
    opt.textContent = `v${v}${v === current ? " (live)" : ""}`;
    if (v === current) opt.selected = true;
    versionsEl.appendChild(opt);
  }
}

$("finetune").onclick = () => void command({ type: "finetune_now" });
$("swap").onclick = () => {
  const v = Number(versionsEl.value);
  if (Number.isInteger(v)) void command({ type: "swap_model", v });
};
$("start").onclick = () => {
  const id = Number($<HTMLInputElement>("gesture-id").value);
  void command({ type: "start_gesture", id });
};
$("stop").onclick = () => void command({ type: "stop_gesture" });
$<HTMLInputElement>("alpha").oninput = (ev) => {
  const alpha = Number((ev.target as HTMLInputElement).value);
  $("alpha-label").textContent = alpha.toFixed(2);
  void command({ type: "set_alpha", alpha });
};

function render(): void {
  const st = client.state;
  const frame = st.takeFrameForRender();
  if (frame) {
    const ctx = handCanvas.getContext("2d");
    if (ctx) drawHand(ctx, frame.angles,
                      { width: handCanvas.width, height: handCanvas.height });
    strips.push(frame.t, frame.angles);
    const sctx = stripCanvas.getContext("2d");
    if (sctx) drawStrips(sctx, strips, stripCanvas.width, stripCanvas.height);
  }
  const acct = st.accounting();
  const m = st.metrics;
  metricsEl.textContent =
    `model v${st.modelVersion} | pose ${st.poseRateHz().toFixed(1)} Hz | ` +
    `rendered ${acct.rendered} dropped ${acct.dropped} ` +
    `malformed ${acct.malformed}` +
    (m ? ` | err ${m.error_deg.toFixed(2)} deg` : "") +
    (st.gesture?.active ? ` | gesture ${st.gesture.id}` : " | idle");
  requestAnimationFrame(render);
}

client.connect();
requestAnimationFrame(render);
