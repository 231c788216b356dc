// Dashboard state: the latest server views plus rolling chart series. All
// values come from /api/state, /api/metrics, and /api/events; the store only
// buffers and prunes them.

import type { MetricsSnapshot, StateView } from "./api.js";

export const HISTORY_WINDOW_US = 10 * 60 * 1_000_000; // 10 min rolling cap
const EVENT_FEED_CAP = 200;

export interface SeriesPoint {
  t_us: number;
  value: number;
}

export interface FeedEntry {
  t_us: number;
  event: string;
  text: string;
}

export interface DashboardState {
  connected: boolean;
  state: StateView | null;
  metrics: MetricsSnapshot | null;
  lastSnapshotWallMs: number;
  series: {
    cloudFrames: SeriesPoint[];
    edgeFrames: SeriesPoint[];
    cloudLatency: SeriesPoint[];
    cloudLatencyCi: SeriesPoint[];
    edgeLatency: SeriesPoint[];
    edgeLatencyCi: SeriesPoint[];
    linkBytes: Map<string, SeriesPoint[]>;
  };
  feed: FeedEntry[];
}

type Listener = () => void;

export class DashboardStore {
  readonly state: DashboardState = {
    connected: false,
    state: null,
    metrics: null,
    lastSnapshotWallMs: 0,
    series: {
      cloudFrames: [],
      edgeFrames: [],
      cloudLatency: [],
      cloudLatencyCi: [],
      edgeLatency: [],
      edgeLatencyCi: [],
      linkBytes: new Map(),
    },
    feed: [],
  };

  private listeners: Listener[] = [];

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  private notify(): void {
    for (const fn of this.listeners) fn();
  }

  setConnected(connected: boolean): void {
    this.state.connected = connected;
    this.notify();
  }

  applyState(view: StateView): void {
    this.state.state = view;
    this.notify();
  }

  applyMetrics(snap: MetricsSnapshot, wallMs: number = Date.now()): void {
    this.state.metrics = snap;
    this.state.lastSnapshotWallMs = wallMs;
    const t = snap.t_us;
    const c = snap.counters;
    const cloud = (c["delivered_cloud_immediate"] ?? 0) + (c["delivered_cloud_fallback"] ?? 0);
    const edge = c["delivered_edge_frames"] ?? 0;
    const s = this.state.series;
    s.cloudFrames.push({ t_us: t, value: cloud });
    s.edgeFrames.push({ t_us: t, value: edge });
    s.cloudLatency.push({ t_us: t, value: snap.latency.cloud.mean_ms });
    s.cloudLatencyCi.push({ t_us: t, value: snap.latency.cloud.ci95_ms });
    s.edgeLatency.push({ t_us: t, value: snap.latency.edge.mean_ms });
    s.edgeLatencyCi.push({ t_us: t, value: snap.latency.edge.ci95_ms });
    for (const [key, bytes] of Object.entries(snap.traffic)) {
      const channel = key.split("|")[0];
      let series = s.linkBytes.get(channel);
      if (!series) {
        series = [];
        s.linkBytes.set(channel, series);
      }
      const last = series[series.length - 1];
      if (last && last.t_us === t) last.value += bytes;
      else series.push({ t_us: t, value: bytes });
    }
    this.prune(t);
    this.notify();
  }

  pushEvent(event: string, payload: Record<string, unknown>): void {
    const t = typeof payload["t_us"] === "number" ? (payload["t_us"] as number) : 0;
    const parts: string[] = [];
    for (const [key, value] of Object.entries(payload)) {
      if (key === "event" || key === "t_us" || key === "metrics") continue;
      parts.push(`${key}=${JSON.stringify(value)}`);
    }
    this.state.feed.unshift({ t_us: t, event, text: parts.join(" ") });
    if (this.state.feed.length > EVENT_FEED_CAP) this.state.feed.pop();
    this.notify();
  }

  private prune(now_us: number): void {
    const cut = now_us - HISTORY_WINDOW_US;
    const s = this.state.series;
    const trim = (arr: SeriesPoint[]) => {
      while (arr.length > 0 && arr[0].t_us < cut) arr.shift();
    };
    trim(s.cloudFrames);
    trim(s.edgeFrames);
    trim(s.cloudLatency);
    trim(s.cloudLatencyCi);
    trim(s.edgeLatency);
    trim(s.edgeLatencyCi);
    for (const series of s.linkBytes.values()) trim(series);
  }

  /** Count feed entries of one kind since a sim timestamp (for rate checks). */
  eventCountSince(event: string, since_us: number): number {
    return this.state.feed.filter((e) => e.event === event && e.t_us >= since_us).length;
  }
}
