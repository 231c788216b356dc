// Browser entry point: wires the store, the event stream, and the controls.
// Controls are pessimistic: a PUT is acknowledged by the server before the
// UI re-reads /api/state.

import { ApiClient, ApiError } from "./api.js";
import { drawChart } from "./charts.js";
import { formatBytes, formatMs, formatSimTime, formatValues, groupHex } from "./format.js";
import { openEventStream } from "./sse.js";
import { DashboardStore } from "./store.js";

const api = new ApiClient("");
const store = new DashboardStore();

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

// --- event stream with reconnect ------------------------------------------

let backoffMs = 500;

function connectStream(): void {
  const handle = openEventStream(
    api.eventsUrl(),
    (ev) => {
      backoffMs = 500;
      store.setConnected(true);
      const payload = JSON.parse(ev.data) as Record<string, unknown>;
      if (ev.event === "snapshot") {
        const metrics = payload["metrics"];
        if (metrics) store.applyMetrics(metrics as never);
      } else {
        store.pushEvent(ev.event, payload);
        if (ev.event === "activation" || ev.event === "edge_assign") {
          void refreshState();
        }
      }
    },
    () => {
      store.setConnected(false);
      setTimeout(connectStream, backoffMs);
      backoffMs = Math.min(backoffMs * 2, 10_000);
    },
  );
  window.addEventListener("beforeunload", () => handle.close());
}

async function refreshState(): Promise<void> {
  try {
    store.applyState(await api.getState());
  } catch {
    store.setConnected(false);
  }
}

// --- controls ----------------------------------------------------------------

function flashError(message: string): void {
  const banner = $("error-banner");
  banner.textContent = message;
  banner.classList.add("visible");
  setTimeout(() => banner.classList.remove("visible"), 4000);
}

async function act(fn: () => Promise<unknown>): Promise<void> {
  try {
    await fn();
    await refreshState();
  } catch (err) {
    flashError(err instanceof ApiError ? err.detail : String(err));
  }
}

function renderDevices(): void {
  const view = store.state.state;
  if (!view) return;
  const tbody = $("device-rows");
  tbody.innerHTML = "";
  for (const dev of view.devices) {
    const tr = document.createElement("tr");
    const modeClass = dev.mode === "e2ed" ? "mode-edge" : "mode-legacy";
    tr.innerHTML = `
      <td>${dev.name}</td>
      <td class="mono">${dev.dev_eui}</td>
      <td><button class="toggle ${modeClass}" data-eui="${dev.dev_eui}"
           data-mode="${dev.mode}">${dev.mode}</button></td>
      <td><input class="rate" data-eui="${dev.dev_eui}" type="number"
           min="100" step="100" value="${dev.period_ms}"> ms</td>
      <td><input class="payload" data-eui="${dev.dev_eui}" type="number"
           min="12" max="222" value="${dev.payload_len}"> B</td>
      <td class="state-${dev.state}">${dev.state}</td>
      <td class="mono">${dev.dev_addr === null ? "-" : dev.dev_addr.toString(16)}</td>
      <td>${dev.assigned_gw ?? "-"}</td>`;
    tbody.appendChild(tr);
  }
  tbody.querySelectorAll<HTMLButtonElement>("button.toggle").forEach((btn) => {
    btn.onclick = () => {
      const next = btn.dataset.mode === "e2ed" ? "legacy" : "e2ed";
      void act(() => api.setDevice(btn.dataset.eui!, { mode: next }));
    };
  });
  tbody.querySelectorAll<HTMLInputElement>("input.rate").forEach((input) => {
    input.onchange = () =>
      void act(() => api.setDevice(input.dataset.eui!, { period_ms: Number(input.value) }));
  });
  tbody.querySelectorAll<HTMLInputElement>("input.payload").forEach((input) => {
    input.onchange = () =>
      void act(() => api.setDevice(input.dataset.eui!, { payload_len: Number(input.value) }));
  });
}

function renderApplication(): void {
  const view = store.state.state;
  if (!view) return;
  const fnSelect = $<HTMLSelectElement>("agg-function");
  const windowInput = $<HTMLInputElement>("agg-window");
  if (document.activeElement !== fnSelect) fnSelect.value = view.aggregation.function;
  if (document.activeElement !== windowInput)
    windowInput.value = String(view.aggregation.window_len);

  const linksDiv = $("link-rows");
  linksDiv.innerHTML = "";
  for (const link of view.links) {
    const row = document.createElement("div");
    row.className = "link-row";
    row.innerHTML = `
      <span class="link-name">${link.id}</span>
      <input class="bw" data-link="${link.id}" type="range" min="8" max="20"
             step="0.1" value="${Math.log2(link.bandwidth_bps)}">
      <span class="mono bw-label">${formatBytes(link.bandwidth_bps)}/s</span>
      <input class="delay" data-link="${link.id}" type="number" min="0"
             value="${link.delay_ms}"> ms`;
    linksDiv.appendChild(row);
  }
  linksDiv.querySelectorAll<HTMLInputElement>("input.bw").forEach((slider) => {
    slider.onchange = () => {
      const bps = Math.round(2 ** Number(slider.value));
      void act(() => api.setLink(slider.dataset.link!, { bandwidth_bps: bps }));
    };
    slider.oninput = () => {
      const label = slider.parentElement?.querySelector(".bw-label");
      if (label) label.textContent = `${formatBytes(Math.round(2 ** Number(slider.value)))}/s`;
    };
  });
  linksDiv.querySelectorAll<HTMLInputElement>("input.delay").forEach((input) => {
    input.onchange = () =>
      void act(() => api.setLink(input.dataset.link!, { delay_ms: Number(input.value) }));
  });
}

function renderCounters(): void {
  const snap = store.state.metrics;
  if (!snap) return;
  $("clock").textContent = formatSimTime(snap.t_us);
  const c = snap.counters;
  const cells: [string, number | string][] = [
    ["legacy path frames", (c["delivered_cloud_immediate"] ?? 0) + (c["delivered_cloud_fallback"] ?? 0)],
    ["edge path frames", c["delivered_edge_frames"] ?? 0],
    ["aggregates", c["delivered_edge_msgs"] ?? 0],
    ["fallback deliveries", c["delivered_cloud_fallback"] ?? 0],
    ["duplicate drops", snap.conservation["dropped_duplicates"] ?? 0],
    ["security drops", snap.conservation["dropped_security"] ?? 0],
    ["ddf size", snap.ddf["size"] ?? 0],
    ["cloud latency", formatMs(snap.latency.cloud.mean_ms)],
    ["edge latency", formatMs(snap.latency.edge.mean_ms)],
  ];
  const grid = $("counter-grid");
  grid.innerHTML = "";
  for (const [label, value] of cells) {
    const div = document.createElement("div");
    div.className = "counter";
    div.innerHTML = `<span class="value">${value}</span><span class="label">${label}</span>`;
    grid.appendChild(div);
  }
}

function canvasCtx(id: string): { ctx: CanvasRenderingContext2D; w: number; h: number } {
  const canvas = $<HTMLCanvasElement>(id);
  const rect = canvas.getBoundingClientRect();
  if (canvas.width !== rect.width) canvas.width = rect.width;
  return { ctx: canvas.getContext("2d")!, w: canvas.width, h: canvas.height };
}

function renderCharts(): void {
  const s = store.state.series;
  {
    const { ctx, w, h } = canvasCtx("chart-frames");
    drawChart(ctx, [
      { label: "legacy path", color: "#e0a030", points: s.cloudFrames },
      { label: "edge path", color: "#46c46e", points: s.edgeFrames },
    ], w, h);
  }
  {
    const { ctx, w, h } = canvasCtx("chart-latency");
    drawChart(ctx, [
      { label: "cloud", color: "#e0a030", points: s.cloudLatency, band: s.cloudLatencyCi },
      { label: "edge", color: "#46c46e", points: s.edgeLatency, band: s.edgeLatencyCi },
    ], w, h, "ms");
  }
  {
    const { ctx, w, h } = canvasCtx("chart-traffic");
    const palette = ["#e0a030", "#46c46e", "#4f9ddb", "#c95fb8", "#8a8adf", "#d96c5f"];
    const series = [...s.linkBytes.entries()].map(([channel, points], i) => ({
      label: channel,
      color: palette[i % palette.length],
      points,
    }));
    drawChart(ctx, series, w, h);
    $("traffic-legend").innerHTML = series
      .map((sr) => `<span style="color:${sr.color}">&#9632; ${sr.label}</span>`)
      .join(" ");
  }
}

function renderFeed(): void {
  const feed = $("event-feed");
  feed.innerHTML = store.state.feed
    .slice(0, 40)
    .map((e) => `<div class="feed-${e.event}"><span class="mono">${formatSimTime(e.t_us)}</span> <b>${e.event}</b> ${e.text}</div>`)
    .join("");
}

// --- security panel ---------------------------------------------------------------

async function refreshSecurityView(): Promise<void> {
  const select = $<HTMLSelectElement>("security-device");
  if (!select.value) return;
  try {
    const view = await api.getSecurityView(select.value);
    $("security-cipher").textContent = view.ns_ciphertext_hex
      ? groupHex(view.ns_ciphertext_hex)
      : "(no frame seen by the NS yet)";
    $("security-edge").textContent = formatValues(view.edge_plaintext);
    $("security-as").textContent = formatValues(view.as_plaintext);
  } catch {
    // device may not be activated yet
  }
}

function renderSecuritySelect(): void {
  const view = store.state.state;
  if (!view) return;
  const select = $<HTMLSelectElement>("security-device");
  const current = select.value;
  select.innerHTML = view.devices
    .map((d) => `<option value="${d.dev_eui}">${d.name} (${d.mode})</option>`)
    .join("");
  if (current) select.value = current;
}

// --- wiring ----------------------------------------------------------------------

function render(): void {
  $("conn-banner").classList.toggle("visible", !store.state.connected);
  renderDevices();
  renderApplication();
  renderCounters();
  renderCharts();
  renderFeed();
  renderSecuritySelect();
}

let renderQueued = false;
store.subscribe(() => {
  if (renderQueued) return;
  renderQueued = true;
  requestAnimationFrame(() => {
    renderQueued = false;
    render();
  });
});

$("agg-apply").onclick = () =>
  void act(() =>
    api.setAggregation({
      function: $<HTMLSelectElement>("agg-function").value,
      window_len: Number($<HTMLInputElement>("agg-window").value),
    }));
$("run-start").onclick = () => void act(() => api.runControl("start"));
$("run-stop").onclick = () => void act(() => api.runControl("stop"));
$("run-reset").onclick = () => void act(() => api.runControl("reset"));
$<HTMLSelectElement>("security-device").onchange = () => void refreshSecurityView();

setInterval(() => void refreshSecurityView(), 2000);
void refreshState();
connectStream();
