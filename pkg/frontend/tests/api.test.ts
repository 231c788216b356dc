import { describe, expect, it, vi } from "vitest";
import { ApiClient, ApiError } from "../src/api.js";

function mockFetch(status: number, body: unknown) {
  return vi.fn(async () =>
    new Response(JSON.stringify(body), {
      status,
      headers: { "content-type": "application/json" },
    }));
}

describe("ApiClient", () => {
  it("maps every control to its documented endpoint", async () => {
    const fetchFn = mockFetch(200, { ok: true });
    const api = new ApiClient("http://h", fetchFn as unknown as typeof fetch);
    await api.setDevice("0011223344556677", { mode: "e2ed" });
    await api.setAggregation({ function: "max", window_len: 5 });
    await api.setLink("gw2-as", { bandwidth_bps: 9600 });
    await api.runControl("reset");
    const urls = fetchFn.mock.calls.map((c) => c[0]);
    expect(urls).toEqual([
      "http://h/api/devices/0011223344556677",
      "http://h/api/aggregation",
      "http://h/api/links/gw2-as",
      "http://h/api/run/reset",
    ]);
    const methods = fetchFn.mock.calls.map((c) => (c[1] as RequestInit).method);
    expect(methods).toEqual(["PUT", "PUT", "PUT", "POST"]);
  });

  it("serializes mutation bodies as json", async () => {
    const fetchFn = mockFetch(200, { ok: true });
    const api = new ApiClient("", fetchFn as unknown as typeof fetch);
    await api.setDevice("aa", { period_ms: 1500 });
    const init = fetchFn.mock.calls[0][1] as RequestInit;
    expect(JSON.parse(init.body as string)).toEqual({ period_ms: 1500 });
  });

  it("surfaces the server detail on 4xx", async () => {
    const fetchFn = mockFetch(400, { detail: "payload_len must be >= 12" });
    const api = new ApiClient("", fetchFn as unknown as typeof fetch);
    await expect(api.setDevice("aa", { payload_len: 4 })).rejects.toThrowError(ApiError);
    await api.setDevice("aa", { payload_len: 4 }).catch((err: ApiError) => {
      expect(err.status).toBe(400);
      expect(err.detail).toContain("payload_len");
    });
  });

  it("builds the events url with an optional limit", () => {
    const api = new ApiClient("http://h");
    expect(api.eventsUrl()).toBe("http://h/api/events");
    expect(api.eventsUrl(50)).toBe("http://h/api/events?limit=50");
  });
});
