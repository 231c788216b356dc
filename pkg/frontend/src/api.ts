// Typed client for the control-plane HTTP API. Every control maps 1:1 to a
// documented endpoint; the dashboard never computes simulation results
// locally.

export interface DeviceRow {
  name: string;
  dev_eui: string;
  mode: "legacy" | "e2ed";
  period_ms: number;
  payload_len: number;
  state: string;
  dev_addr: number | null;
  assigned_gw: string | null;
  frames_sent: number;
}

export interface LinkRow {
  id: string;
  a: string;
  b: string;
  bandwidth_bps: number;
  delay_ms: number;
}

export interface StateView {
  t_us: number;
  pacing: number;
  devices: DeviceRow[];
  gateways: { gw_id: string; mode: string; serving: number[] }[];
  links: LinkRow[];
  aggregation: { function: string; window_len: number };
}

export interface LatencyStat {
  n: number;
  mean_ms: number;
  ci95_ms: number;
}

export interface MetricsSnapshot {
  t_us: number;
  counters: Record<string, number>;
  traffic: Record<string, number>;
  latency: { cloud: LatencyStat; edge: LatencyStat };
  ddf: Record<string, number>;
  queue_depths: Record<string, number>;
  conservation: Record<string, number>;
  deliveries_total: number;
}

export interface SecurityView {
  dev_eui: string;
  dev_addr: number | null;
  ns_ciphertext_hex: string | null;
  edge_plaintext: number[] | null;
  as_plaintext: number[] | null;
}

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export class ApiClient {
  constructor(private base: string = "", private fetchFn: typeof fetch = fetch) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await this.fetchFn(this.base + path, {
      method,
      headers: body === undefined ? {} : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const parsed = (await resp.json()) as { detail?: string };
        if (parsed.detail) detail = parsed.detail;
      } catch {
        // keep statusText
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  getState(): Promise<StateView> {
    return this.request("GET", "/api/state");
  }

  getMetrics(): Promise<MetricsSnapshot> {
    return this.request("GET", "/api/metrics");
  }

  getSecurityView(devEui: string): Promise<SecurityView> {
    return this.request("GET", `/api/security/view/${devEui}`);
  }

  setDevice(devEui: string, change: { mode?: string; period_ms?: number; payload_len?: number }) {
    return this.request("PUT", `/api/devices/${devEui}`, change);
  }

  setAggregation(change: { function?: string; window_len?: number }) {
    return this.request("PUT", "/api/aggregation", change);
  }

  setLink(linkId: string, change: { bandwidth_bps?: number; delay_ms?: number }) {
    return this.request("PUT", `/api/links/${linkId}`, change);
  }

  runControl(action: "start" | "stop" | "reset") {
    return this.request("POST", `/api/run/${action}`);
  }

  eventsUrl(limit?: number): string {
    return this.base + "/api/events" + (limit ? `?limit=${limit}` : "");
  }
}
