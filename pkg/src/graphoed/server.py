"""HTTP session service: the adaptive loop driven by a human labeler.

One worker thread owns each session's loop; request handlers only stage
answers and read an immutable snapshot that is swapped at iteration
boundaries, so reads never block on solves.  Every transition is persisted,
making sessions resumable across service restarts.
"""

from __future__ import annotations

import json
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from . import data_io
from .active_loop import (
    LoopRunner,
    RunState,
    config_from_dict,
    config_to_dict,
    load_run_state,
    save_run_state,
)
from .errors import ConfigError, DataError, GraphoedError
from .graph import build_knn_graph, build_laplacian, build_regularizer

INTERACTIVE_MAX_N = 50_000

AWAITING = "awaiting-labels"
COMPUTING = "computing"
FINISHED = "finished"


class Session:
    """Loop runner plus the staging area for partially answered batches."""

    def __init__(self, session_id: str, dataset_id: str, dataset, config, store):
        self.id = session_id
        self.dataset_id = dataset_id
        self.dataset = dataset
        self.config = config
        self.store = store
        self.lock = threading.Lock()
        self.runner = LoopRunner(dataset, config)
        self.staged: dict[int, int] = {}
        self.status = AWAITING if self.runner.pending else FINISHED
        self.snapshot = self._make_snapshot(stale=False)
        self.worker: threading.Thread | None = None

    # -- snapshot & persistence (called under self.lock) ----------------

    def _make_snapshot(self, stale: bool) -> dict:
        runner = self.runner
        est = runner.estimate
        scores = None
        excluded: list[int] = []
        if runner.last_eval is not None:
            scores = np.abs(runner.last_eval.gradient).tolist()
            if runner.last_batch is not None:
                excluded = [int(i) for i in runner.last_batch.excluded]
        display = self.dataset.display_xy
        return {
            "iteration": runner.state.iteration,
            "labeled_count": runner.state.label_count,
            "pseudo_labels": est.pseudo_labels.tolist(),
            "certainty": est.certainty.tolist(),
            "display_xy": None if display is None else display.tolist(),
            "design_scores": scores,
            "design_excluded": excluded,
            "history": [json.loads(r.to_json()) for r in runner.records],
            "stale": stale,
        }

    def _run_state(self) -> RunState:
        return RunState(
            state=self.runner.state,
            estimate=self.runner.estimate,
            class_count=self.dataset.class_count,
            ids=self.dataset.ids,
            label_values=self.dataset.label_values,
            display_xy=self.dataset.display_xy,
            pending=tuple(self.runner.pending),
        )

    def persist(self):
        self.store.persist_session(self)

    # -- transitions -----------------------------------------------------

    def submit_labels(self, items: list[dict]) -> tuple[dict | None, int]:
        """Stage answers; kick off an advance when the batch completes.

        Returns (error_body, status_code) with error_body None on success.
        """
        with self.lock:
            if self.status == FINISHED:
                return {"error": "session is finished"}, 409
            if self.status == COMPUTING:
                return {"error": "iteration in progress"}, 409
            pending = set(self.runner.pending)
            for item in items:
                index, label = int(item["index"]), int(item["class"])
                if index not in pending or index in self.staged:
                    return {"error": f"index {index} is not pending"}, 409
                if not 0 <= label < self.dataset.class_count:
                    return {"error": f"class {label} outside [0, {self.dataset.class_count})"}, 422
            for item in items:
                self.staged[int(item["index"])] = int(item["class"])
            accepted = len(items)
            complete = len(self.staged) == len(pending)
            if complete:
                self.status = COMPUTING
                answers = dict(self.staged)
                self.staged = {}
                self.worker = threading.Thread(
                    target=self._advance, args=(answers,), daemon=True
                )
                self.worker.start()
            self.persist()
            return None, accepted

    def _advance(self, answers: dict[int, int]):
        try:
            self.runner.submit(answers)
        except GraphoedError as exc:
            with self.lock:
                self.status = AWAITING
                self.snapshot = {**self.snapshot, "error": str(exc)}
            return
        with self.lock:
            self.status = FINISHED if self.runner.finished else AWAITING
            self.snapshot = self._make_snapshot(stale=False)
            self.persist()

    # -- reads -----------------------------------------------------------

    def state_body(self) -> dict:
        with self.lock:
            return {
                "session_id": self.id,
                "state": self.status,
                "iteration": self.snapshot["iteration"],
                "labeled_count": self.snapshot["labeled_count"],
                "class_count": self.dataset.class_count,
                "pending_queries": list(self.runner.pending) if self.status != COMPUTING else [],
                "answered_count": len(self.staged),
                "history": self.snapshot["history"],
            }

    def pseudo_labels_body(self) -> dict:
        with self.lock:
            return {
                "pseudo_label": self.snapshot["pseudo_labels"],
                "certainty": self.snapshot["certainty"],
                "display_xy": self.snapshot["display_xy"],
                "pending_queries": list(self.runner.pending) if self.status != COMPUTING else [],
                "iteration": self.snapshot["iteration"],
                "stale": self.status == COMPUTING,
            }

    def design_scores_body(self) -> dict:
        with self.lock:
            return {
                "scores": self.snapshot["design_scores"],
                "excluded": self.snapshot["design_excluded"],
                "iteration": self.snapshot["iteration"],
                "stale": self.status == COMPUTING,
            }


class SessionStore:
    """Registry of datasets and sessions, persisted under one directory."""

    def __init__(self, data_dir: Path):
        self.data_dir = Path(data_dir)
        (self.data_dir / "datasets").mkdir(parents=True, exist_ok=True)
        (self.data_dir / "sessions").mkdir(parents=True, exist_ok=True)
        self.sessions: dict[str, Session] = {}
        self.datasets: dict[str, data_io.Dataset] = {}
        self.lock = threading.Lock()

    # -- datasets --------------------------------------------------------

    def register_csv(self, csv_text: str, has_labels: bool,
                     class_count: int | None = None) -> str:
        dataset_id = uuid.uuid4().hex[:12]
        path = self.data_dir / "datasets" / f"{dataset_id}.csv"
        path.write_text(csv_text)
        meta = {"has_labels": has_labels, "class_count": class_count}
        path.with_suffix(".json").write_text(json.dumps(meta))
        self.datasets[dataset_id] = data_io.load_csv(
            path, has_labels=has_labels, class_count=class_count
        )
        return dataset_id

    def get_dataset(self, dataset_id: str) -> data_io.Dataset | None:
        if dataset_id in self.datasets:
            return self.datasets[dataset_id]
        path = self.data_dir / "datasets" / f"{dataset_id}.csv"
        if not path.exists():
            return None
        meta = json.loads(path.with_suffix(".json").read_text())
        ds = data_io.load_csv(path, has_labels=meta["has_labels"],
                              class_count=meta.get("class_count"))
        self.datasets[dataset_id] = ds
        return ds

    # -- sessions ----------------------------------------------------------

    def create_session(self, dataset_id: str, dataset, config) -> Session:
        session_id = uuid.uuid4().hex[:12]
        session = Session(session_id, dataset_id, dataset, config, self)
        with self.lock:
            self.sessions[session_id] = session
        with session.lock:
            session.persist()
        return session

    def persist_session(self, session: Session):
        base = self.data_dir / "sessions" / session.id
        meta = {
            "session_id": session.id,
            "dataset_id": session.dataset_id,
            "config": config_to_dict(session.config),
            "status": AWAITING if session.status == COMPUTING else session.status,
            "staged": session.staged,
            "records": [r.to_json() for r in session.runner.records],
            "queried": sorted(session.runner.queried),
            "initial_done": session.runner._initial_done,
        }
        base.with_suffix(".json").write_text(json.dumps(meta))
        save_run_state(base.with_suffix(".npz"), session._run_state())

    def get_session(self, session_id: str) -> Session | None:
        with self.lock:
            if session_id in self.sessions:
                return self.sessions[session_id]
        base = self.data_dir / "sessions" / session_id
        if not base.with_suffix(".json").exists():
            return None
        return self._resume(session_id, base)

    def _resume(self, session_id: str, base: Path) -> Session:
        """Rebuild a parked session from disk; state matches pre-park exactly."""
        meta = json.loads(base.with_suffix(".json").read_text())
        run_state = load_run_state(base.with_suffix(".npz"))
        dataset = self.get_dataset(meta["dataset_id"])
        if dataset is None:
            raise DataError(f"dataset {meta['dataset_id']} for session {session_id} is gone")
        config = config_from_dict(meta["config"], source="session")
        session = Session.__new__(Session)
        session.id = session_id
        session.dataset_id = meta["dataset_id"]
        session.dataset = dataset
        session.config = config
        session.store = self
        session.lock = threading.Lock()
        runner = LoopRunner.__new__(LoopRunner)
        runner.dataset = dataset
        runner.config = config
        runner.hp = config.hyperparams
        runner.quiet = True
        runner.graph = build_knn_graph(dataset, config.hyperparams.k_neighbors)
        runner.L = build_regularizer(
            build_laplacian(runner.graph), config.hyperparams.tau, config.hyperparams.eta
        )
        runner.state = run_state.state
        runner.estimate = run_state.estimate
        runner.records = [data_io.RunRecord.from_json(r) for r in meta["records"]]
        runner.queried = set(meta["queried"])
        runner.finished = meta["status"] == FINISHED
        runner.last_eval = None
        runner.last_batch = None
        runner._one_shot_queue = []
        runner._solver = None
        runner._initial_done = meta["initial_done"]
        runner.pending = list(run_state.pending)
        session.runner = runner
        session.staged = {int(k): v for k, v in meta["staged"].items()}
        session.status = meta["status"]
        session.snapshot = session._make_snapshot(stale=False)
        session.worker = None
        with self.lock:
            self.sessions[session_id] = session
        return session

    def state_path(self, session_id: str) -> Path:
        return self.data_dir / "sessions" / f"{session_id}.npz"


def create_app(data_dir="runs/server", ui_dir=None) -> FastAPI:
    app = FastAPI(title="graphoed labeling service")
    store = SessionStore(Path(data_dir))
    app.state.store = store
    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    @app.post("/datasets")
    async def post_dataset(request: Request):
        try:
            body = await request.json()
        except json.JSONDecodeError:
            return JSONResponse({"error": "body must be JSON"}, status_code=400)
        try:
            if "generator" in body:
                gen = body["generator"]
                if gen.get("kind") != "blobs":
                    return JSONResponse({"error": f"unknown generator {gen.get('kind')!r}"},
                                        status_code=400)
                ds = data_io.make_blobs_2d(
                    int(gen.get("n", 1000)), int(gen.get("classes", 3)),
                    seed=int(gen.get("seed", 0)),
                )
                csv_text = _dataset_to_csv(ds)
                dataset_id = store.register_csv(csv_text, has_labels=True)
            elif "csv" in body:
                dataset_id = store.register_csv(
                    body["csv"], has_labels=bool(body.get("has_labels", False)),
                    class_count=body.get("class_count"),
                )
            else:
                return JSONResponse({"error": "need 'csv' or 'generator'"}, status_code=400)
        except (DataError, ValueError, TypeError, KeyError) as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        ds = store.get_dataset(dataset_id)
        return JSONResponse(
            {"dataset_id": dataset_id, "n": ds.n, "m": ds.m, "class_count": ds.class_count},
            status_code=201,
        )

    @app.post("/sessions")
    async def post_session(request: Request):
        try:
            body = await request.json()
        except json.JSONDecodeError:
            return JSONResponse({"error": "body must be JSON"}, status_code=400)
        dataset_id = body.get("dataset_id")
        if not dataset_id:
            return JSONResponse({"error": "dataset_id is required"}, status_code=400)
        dataset = store.get_dataset(dataset_id)
        if dataset is None:
            return JSONResponse({"error": f"unknown dataset {dataset_id!r}"}, status_code=400)
        if dataset.n > INTERACTIVE_MAX_N:
            return JSONResponse(
                {"error": f"dataset too large for interactive mode (n={dataset.n})"},
                status_code=413,
            )
        try:
            config = config_from_dict(dict(body.get("config", {})), source="session config")
            session = store.create_session(dataset_id, dataset, config)
        except (ConfigError, DataError) as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        return JSONResponse(
            {"session_id": session.id, "pending_queries": list(session.runner.pending)},
            status_code=201,
        )

    @app.post("/sessions/{session_id}/labels")
    async def post_labels(session_id: str, request: Request):
        session = store.get_session(session_id)
        if session is None:
            return JSONResponse({"error": "unknown session"}, status_code=404)
        try:
            body = await request.json()
        except json.JSONDecodeError:
            return JSONResponse({"error": "body must be JSON"}, status_code=400)
        if not isinstance(body, list):
            return JSONResponse({"error": "body must be a list of {index, class}"},
                                status_code=400)
        try:
            items = [{"index": int(x["index"]), "class": int(x["class"])} for x in body]
        except (KeyError, TypeError, ValueError):
            return JSONResponse({"error": "each item needs integer index and class"},
                                status_code=400)
        error, code = session.submit_labels(items)
        if error is not None:
            return JSONResponse(error, status_code=code)
        return JSONResponse({"accepted": code, "state": session.status})

    @app.get("/sessions/{session_id}/state")
    async def get_state(session_id: str):
        session = store.get_session(session_id)
        if session is None:
            return JSONResponse({"error": "unknown session"}, status_code=404)
        return JSONResponse(session.state_body())

    @app.get("/sessions/{session_id}/pseudo_labels")
    async def get_pseudo_labels(session_id: str):
        session = store.get_session(session_id)
        if session is None:
            return JSONResponse({"error": "unknown session"}, status_code=404)
        return JSONResponse(session.pseudo_labels_body())

    @app.get("/sessions/{session_id}/design_scores")
    async def get_design_scores(session_id: str):
        session = store.get_session(session_id)
        if session is None:
            return JSONResponse({"error": "unknown session"}, status_code=404)
        return JSONResponse(session.design_scores_body())

    @app.get("/sessions/{session_id}/export")
    async def get_export(session_id: str):
        session = store.get_session(session_id)
        if session is None:
            return JSONResponse({"error": "unknown session"}, status_code=404)
        # go through the persisted state so the bytes match the CLI export
        run_state = load_run_state(store.state_path(session_id))
        return Response(content=run_state.export_csv(), media_type="text/csv")

    return app


def _dataset_to_csv(ds: data_io.Dataset) -> str:
    import io

    out = io.StringIO()
    for i in range(ds.n):
        feats = ",".join(format(v, ".17g") for v in ds.features[i])
        out.write(f"{feats},{int(ds.true_labels[i])}\n")
    return out.getvalue()
