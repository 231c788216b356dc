"""HTTP control plane: state queries, runtime mutations, server-sent events.

Handlers never touch simulation state directly: every read or mutation is a
closure submitted to the engine's command queue and applied between events,
then acknowledged. The event stream pushes the 1 Hz metric snapshots plus
discrete events (activations, aggregates, duplicate and security drops).
"""

from __future__ import annotations

import json
import queue
import threading
from pathlib import Path
from typing import Any, Callable

from fastapi import FastAPI, HTTPException
from fastapi.responses import StreamingResponse
from fastapi.staticfiles import StaticFiles

from .runner import Network
from .scenario import ScenarioConfig

EVENT_QUEUE_SIZE = 1000


class RunController:
    """Owns the network and the engine thread; serializes all access."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self._subscribers: list[queue.Queue] = []
        self._sub_lock = threading.Lock()
        self.network = Network(cfg, on_event=self._broadcast)
        self._thread: threading.Thread | None = None

    @property
    def interactive(self) -> bool:
        return self.cfg.pacing > 0

    @property
    def running(self) -> bool:
        return self._thread is not None and self._thread.is_alive()

    def start(self) -> None:
        if self.running:
            return
        self.network.engine.stop_requested.clear()
        self._thread = threading.Thread(target=self.network.run_realtime,
                                        name="edgelora-engine", daemon=True)
        self._thread.start()

    def stop(self) -> None:
        if self._thread is None:
            return
        self.network.engine.stop_requested.set()
        self._thread.join(timeout=5.0)
        self._thread = None

    def reset(self) -> None:
        self.stop()
        self.network = Network(self.cfg, on_event=self._broadcast)

    def apply(self, fn: Callable[[Network], Any]) -> Any:
        """Run fn(network) on the engine loop (or inline when stopped)."""
        net = self.network
        if self.running:
            return net.engine.submit(lambda: fn(net)).wait(timeout=10.0)
        return fn(net)

    # -- event fan-out --------------------------------------------------------

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=EVENT_QUEUE_SIZE)
        with self._sub_lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._sub_lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def _broadcast(self, event: dict) -> None:
        with self._sub_lock:
            subscribers = list(self._subscribers)
        for q in subscribers:
            try:
                q.put_nowait(event)
            except queue.Full:
                pass  # slow consumer drops events, never blocks the engine


def create_app(controller: RunController,
               static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="edgelora control plane")

    def mutate(fn: Callable[[Network], Any]) -> Any:
        if not controller.interactive:
            raise HTTPException(
                status_code=409,
                detail="mutations are forbidden in fast deterministic mode")
        try:
            return controller.apply(fn)
        except (ValueError, KeyError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc

    @app.get("/api/state")
    def get_state():
        return controller.apply(lambda net: net.state_view())

    @app.get("/api/metrics")
    def get_metrics():
        return controller.apply(lambda net: net.snapshot().to_json())

    @app.get("/api/security/view/{dev_eui}")
    def get_security_view(dev_eui: str):
        view = controller.apply(lambda net: net.security_view(dev_eui))
        if view is None:
            raise HTTPException(status_code=404, detail=f"unknown device {dev_eui}")
        return view

    @app.put("/api/devices/{dev_eui}")
    def put_device(dev_eui: str, body: dict):
        allowed = {"mode", "period_ms", "payload_len"}
        unknown = set(body) - allowed
        if unknown:
            raise HTTPException(status_code=400,
                                detail=f"unknown fields: {sorted(unknown)}")

        def change(net: Network):
            dev = net.device_by_eui(dev_eui)
            if dev is None:
                raise KeyError(f"unknown device {dev_eui}")
            name = dev.profile.name
            if "period_ms" in body:
                net.set_device_period(name, int(body["period_ms"]))
            if "payload_len" in body:
                net.set_device_payload_len(name, int(body["payload_len"]))
            if "mode" in body:
                net.set_device_mode(name, str(body["mode"]))
            return {"ok": True, "device": name}

        return mutate(change)

    @app.put("/api/aggregation")
    def put_aggregation(body: dict):
        unknown = set(body) - {"function", "window_len"}
        if unknown:
            raise HTTPException(status_code=400,
                                detail=f"unknown fields: {sorted(unknown)}")

        def change(net: Network):
            net.set_aggregation(
                function=body.get("function"),
                window_len=(int(body["window_len"])
                            if "window_len" in body else None))
            return {"ok": True,
                    "aggregation": {"function": net.agg_spec.function,
                                    "window_len": net.agg_spec.window_len}}

        return mutate(change)

    @app.put("/api/links/{link_id}")
    def put_link(link_id: str, body: dict):
        unknown = set(body) - {"bandwidth_bps", "delay_ms"}
        if unknown:
            raise HTTPException(status_code=400,
                                detail=f"unknown fields: {sorted(unknown)}")

        def change(net: Network):
            net.set_link(
                link_id,
                bandwidth_bps=(int(body["bandwidth_bps"])
                               if "bandwidth_bps" in body else None),
                delay_ms=(float(body["delay_ms"])
                          if "delay_ms" in body else None))
            return {"ok": True, "link": link_id}

        return mutate(change)

    @app.post("/api/run/{action}")
    def post_run(action: str):
        if action not in ("start", "stop", "reset"):
            raise HTTPException(status_code=404, detail=f"unknown action {action}")
        if not controller.interactive:
            raise HTTPException(status_code=409,
                                detail="run control requires wall-clock pacing")
        if action == "start":
            controller.start()
        elif action == "stop":
            controller.stop()
        else:
            controller.reset()
        return {"ok": True, "running": controller.running}

    @app.get("/api/events")
    def get_events(limit: int | None = None):
        # limit bounds the stream (handy for curl and tests); browsers omit it
        def stream():
            q = controller.subscribe()
            sent = 0
            try:
                yield ": connected\n\n"
                while limit is None or sent < limit:
                    try:
                        event = q.get(timeout=1.0)
                    except queue.Empty:
                        yield ": keepalive\n\n"
                        continue
                    name = event.get("event", "event")
                    payload = json.dumps(event, sort_keys=True)
                    yield f"event: {name}\ndata: {payload}\n\n"
                    sent += 1
            finally:
                controller.unsubscribe(q)

        return StreamingResponse(stream(), media_type="text/event-stream")

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True),
                  name="dashboard")
    return app


def default_static_dir() -> Path | None:
    """frontend/dist when the dashboard has been built next to this package."""
    for candidate in (Path.cwd() / "frontend" / "dist",
                      Path(__file__).resolve().parents[2] / "frontend" / "dist"):
        if candidate.is_dir():
            return candidate
    return None


def serve_control_api(controller: RunController, host: str, port: int) -> None:
    """Blocking uvicorn server around the control-plane app."""
    import uvicorn

    app = create_app(controller, static_dir=default_static_dir())
    uvicorn.run(app, host=host, port=port, log_level="warning")
