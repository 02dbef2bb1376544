"""
MACE matting pipeline
Wires the three agents into the consensus engine per frame, runs batches
in spatial or spatio-temporal mode, evaluates against ground truth and
runs leave-one-agent-out ablations.
"""

import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from background_agent import BackgroundAgent, BackgroundPrior, build_background_prior, register_plate
from config import AGENT_NAMES, PipelineConfig
from consensus import AgentOp, EquilibriumReport, StackedState, mace_iterate, verify_equilibrium
from errors import FrameError, ImageError, ParameterError
from image_io import find_raster, is_supported, load_image, load_pair, save_matte
from matting_agent import MattingAgent
from metrics import MetricReport, evaluate_pair
from sparse_linalg import write_coordinate_text
from tv_agent import TVAgent

logger = logging.getLogger(__name__)

PriorHook = Callable[[int, np.ndarray], np.ndarray]


@dataclass
class FrameJob:
    """One frame to matte: inputs, output and optional ground truth"""
    frame_path: str
    plate_path: str
    output_path: str
    gt_path: Optional[str] = None
    index: int = 0

    def check(self) -> None:
        for path in (self.frame_path, self.plate_path, self.gt_path):
            if path is not None and not os.path.exists(path):
                raise ImageError(f"missing input {path}")

    @property
    def name(self) -> str:
        return os.path.splitext(os.path.basename(self.frame_path))[0]


@dataclass
class BatchResult:
    """Mattes, metrics and failures of one batch run"""
    report: MetricReport
    mattes: Dict[int, np.ndarray] = field(default_factory=dict)
    failures: List[FrameError] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    @property
    def exit_status(self) -> int:
        return 0 if self.ok else 1


class FrameBlockAgent:
    """Applies one per-frame operator to each frame slice of a stacked volume vector"""

    def __init__(self, operators: Sequence[Callable[[np.ndarray], np.ndarray]], frame_size: int):
        self.operators = list(operators)
        self.frame_size = frame_size

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64).ravel()
        parts = [op(z[t * self.frame_size:(t + 1) * self.frame_size])
                 for t, op in enumerate(self.operators)]
        return np.concatenate(parts)


@dataclass
class FrameParts:
    """Per-frame pieces the agents are built from; independent of the temporal window"""
    prior: BackgroundPrior
    matting: Optional[MattingAgent]
    plate_offset: Tuple[int, int] = (0, 0)


def prepare_frame(frame: np.ndarray, plate: np.ndarray, cfg: PipelineConfig,
                  frame_index: int = 0) -> FrameParts:
    """Register the plate to the frame, then build r0 and, when enabled, the matting agent"""
    offset = (0, 0)
    if cfg.plate_shift > 0:
        plate, offset = register_plate(frame, plate, cfg.plate_shift)
        if offset != (0, 0):
            logger.info(f"Frame {frame_index}: plate shifted by {offset}")
    prior = build_background_prior(frame, plate, cfg.sigma_delta, cfg.hs, cfg.hr, cfg.bilateral_radius,
                                   cfg.tauA, cfg.tauTheta, cfg.flood_tol, cfg.intensity_scale)
    matting = MattingAgent.from_config(frame, plate, cfg) if 'matting' in cfg.agents else None
    return FrameParts(prior, matting, offset)


def frame_agents(parts: FrameParts, r0: np.ndarray, cfg: PipelineConfig) -> List[AgentOp]:
    """The enabled agents of one frame, in matting, background, tv order"""
    agents = []
    if parts.matting is not None:
        agents.append(parts.matting.as_agent())
    if 'background' in cfg.agents:
        agents.append(BackgroundAgent(r0, cfg.lambda2, cfg.gamma).as_agent())
    if 'tv' in cfg.agents:
        agents.append(TVAgent(parts.prior.r0.shape, cfg.lambda3, cfg.beta_spatial, cfg.tv_inner_tol,
                              cfg.tv_inner_max, cfg.tv_strict).as_agent())
    return agents


def _dump_debug(debug_dir: str, frame_id: str, prior: BackgroundPrior,
                matting: Optional[MattingAgent]) -> None:
    os.makedirs(debug_dir, exist_ok=True)
    save_matte(prior.rc, os.path.join(debug_dir, f"{frame_id}_rc.png"))
    save_matte(prior.re, os.path.join(debug_dir, f"{frame_id}_re.png"))
    save_matte(prior.r0, os.path.join(debug_dir, f"{frame_id}_r0.png"))
    if matting is not None:
        write_coordinate_text(matting.lap.matrix, os.path.join(debug_dir, f"{frame_id}_laplacian.txt"))


def _run_engine(agents: List[AgentOp], r0: np.ndarray, cfg: PipelineConfig,
                verify: bool) -> EquilibriumReport:
    initial = StackedState.replicate(r0, len(agents))
    pool = ThreadPoolExecutor(max_workers=len(agents)) if cfg.parallel_agents else nullcontext()
    with pool as executor:
        report = mace_iterate(initial, agents, cfg.tol, cfg.max_iter, cfg.mann_weight, executor)

    if verify and report.converged:
        diag = verify_equilibrium(report, agents, 10 * cfg.tol)
        if not diag.passed:
            logger.warning(f"Equilibrium check failed: agents {diag.agent_residuals}, "
                           f"consensus {diag.consensus_residual:.3g}")
    return report


def extract_frame(frame: np.ndarray, plate: np.ndarray, cfg: Optional[PipelineConfig] = None,
                  prior_hook: Optional[PriorHook] = None, frame_index: int = 0,
                  verify: bool = True) -> Tuple[np.ndarray, EquilibriumReport]:
    """
    Matte one frame: build r0, the Laplacian and the enabled agents, start
    every copy at r0, iterate to consensus and clamp once to [0, 1].
    """
    cfg = (cfg or PipelineConfig()).validate()
    frame = np.asarray(frame, dtype=np.float64)
    plate = np.asarray(plate, dtype=np.float64)
    if frame.shape != plate.shape:
        raise FrameError(frame_index, ImageError(
            f"frame is {frame.shape[1]}x{frame.shape[0]} but plate is {plate.shape[1]}x{plate.shape[0]}"))

    try:
        h, w = frame.shape[:2]
        parts = prepare_frame(frame, plate, cfg, frame_index)
        prior, matting = parts.prior, parts.matting
        r0 = prior.r0 if prior_hook is None else prior_hook(frame_index, prior.r0)

        agents = frame_agents(parts, r0, cfg)

        if cfg.debug_dir:
            _dump_debug(cfg.debug_dir, f"frame_{frame_index:04d}", prior, matting)

        report = _run_engine(agents, r0.ravel(), cfg, verify)
    except FrameError:
        raise
    except Exception as e:
        raise FrameError(frame_index, e) from e

    matte = np.clip(report.solution.reshape(h, w), 0.0, 1.0)
    logger.info(f"Frame {frame_index}: {report.iterations_used} iterations, "
                f"converged={report.converged}, residual {report.final_residual:.3g}")
    return matte, report


def extract_volume(frames: Sequence[np.ndarray], plates: Sequence[np.ndarray],
                   cfg: Optional[PipelineConfig] = None, prior_hook: Optional[PriorHook] = None,
                   first_index: int = 0, verify: bool = True,
                   cache: Optional[Dict[int, FrameParts]] = None) -> Tuple[np.ndarray, EquilibriumReport]:
    """
    Joint consensus over a short run of frames: agents 1 and 2 act frame by
    frame, agent 3 is the space-time TV prox over the whole volume.
    Returns a T x H x W matte volume. Frame parts found in cache under their
    frame index are reused and new ones are stored there, so overlapping
    windows build each prior and Laplacian once.
    """
    cfg = (cfg or PipelineConfig()).validate()
    if len(frames) != len(plates) or not frames:
        raise ParameterError(f"need matching nonempty frame and plate lists, got {len(frames)}/{len(plates)}")

    shape = frames[0].shape
    h, w = shape[:2]
    priors, mattings = [], []
    for offset, (frame, plate) in enumerate(zip(frames, plates)):
        index = first_index + offset
        if frame.shape != shape or plate.shape != shape:
            raise FrameError(index, ImageError(f"frame {frame.shape} / plate {plate.shape} differ from {shape}"))
        try:
            parts = cache.get(index) if cache is not None else None
            if parts is None:
                parts = prepare_frame(frame, plate, cfg, index)
                if cache is not None:
                    cache[index] = parts
            r0 = parts.prior.r0 if prior_hook is None else prior_hook(index, parts.prior.r0)
            priors.append(r0.ravel())
            if parts.matting is not None:
                mattings.append(parts.matting)
        except Exception as e:
            raise FrameError(index, e) from e

    r0_volume = np.concatenate(priors)
    agents = []
    if mattings:
        agents.append(AgentOp('matting', FrameBlockAgent(mattings, h * w)))
    if 'background' in cfg.agents:
        agents.append(BackgroundAgent(r0_volume, cfg.lambda2, cfg.gamma).as_agent())
    if 'tv' in cfg.agents:
        agents.append(TVAgent((len(frames), h, w), cfg.lambda3, cfg.beta_temporal, cfg.tv_inner_tol,
                              cfg.tv_inner_max, cfg.tv_strict).as_agent())

    try:
        report = _run_engine(agents, r0_volume, cfg, verify)
    except Exception as e:
        raise FrameError(first_index, e) from e
    return np.clip(report.solution.reshape(len(frames), h, w), 0.0, 1.0), report


def temporal_window_bounds(t: int, count: int, window: int) -> Tuple[int, int]:
    """[start, stop) of a window of the given size containing t, centered where possible"""
    window = min(window, count)
    start = min(max(t - window // 2, 0), count - window)
    return start, start + window


class BatchRunner:
    """Runs a list of frame jobs and keeps running statistics"""

    def __init__(self, cfg: Optional[PipelineConfig] = None, prior_hook: Optional[PriorHook] = None):
        """Initialize the batch runner"""
        self.cfg = (cfg or PipelineConfig()).validate()
        self.prior_hook = prior_hook
        self.write_lock = threading.Lock()
        self.stats = {
            'frames_processed': 0,
            'frames_failed': 0,
            'frames_converged': 0,
            'total_iterations': 0,
            'total_seconds': 0.0,
            'start_time': datetime.now().isoformat(),
            'last_frame': None,
        }

    def _load_truth(self, job: FrameJob) -> Optional[np.ndarray]:
        if job.gt_path is None:
            return None
        return load_image(job.gt_path, color=False, downsample=self.cfg.downsample)

    def _finish(self, job: FrameJob, matte: np.ndarray, report: EquilibriumReport, seconds: float,
                result: BatchResult) -> None:
        with self.write_lock:
            save_matte(matte, job.output_path)
            result.mattes[job.index] = matte
            self.stats['frames_processed'] += 1
            self.stats['frames_converged'] += int(report.converged)
            self.stats['total_iterations'] += report.iterations_used
            self.stats['total_seconds'] += seconds
            self.stats['last_frame'] = job.name

        truth = self._load_truth(job)
        if truth is not None:
            metrics = evaluate_pair(matte, truth, self.cfg.contour_tol)
            with self.write_lock:
                result.report.add(job.name, metrics, seconds=seconds,
                                  iterations=report.iterations_used, converged=report.converged)

    def _fail(self, job: FrameJob, error: Exception, result: BatchResult) -> None:
        failure = error if isinstance(error, FrameError) else FrameError(job.index, error)
        logger.error(f"Failed to process frame {job.index} ({job.frame_path}): {failure.cause}")
        with self.write_lock:
            result.failures.append(failure)
            self.stats['frames_failed'] += 1

    def _run_spatial_job(self, job: FrameJob, result: BatchResult) -> None:
        try:
            job.check()
            frame, plate = load_pair(job.frame_path, job.plate_path, self.cfg.downsample)
            started = time.perf_counter()
            matte, report = extract_frame(frame, plate, self.cfg, self.prior_hook, job.index)
            self._finish(job, matte, report, time.perf_counter() - started, result)
        except Exception as e:
            self._fail(job, e, result)

    def run_spatial(self, jobs: Sequence[FrameJob]) -> BatchResult:
        result = BatchResult(MetricReport())
        if self.cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=self.cfg.workers) as executor:
                list(executor.map(lambda job: self._run_spatial_job(job, result), jobs))
        else:
            for job in jobs:
                self._run_spatial_job(job, result)
        return result

    def run_temporal(self, jobs: Sequence[FrameJob]) -> BatchResult:
        result = BatchResult(MetricReport())
        if len(jobs) < self.cfg.temporal_window:
            raise ParameterError(f"temporal mode needs at least {self.cfg.temporal_window} frames, "
                                 f"got {len(jobs)}")

        loaded: List[Optional[Tuple[np.ndarray, np.ndarray]]] = []
        for job in jobs:
            try:
                job.check()
                loaded.append(load_pair(job.frame_path, job.plate_path, self.cfg.downsample))
            except Exception as e:
                self._fail(job, e, result)
                loaded.append(None)

        cache: Dict[int, FrameParts] = {}
        for t, job in enumerate(jobs):
            if loaded[t] is None:
                continue
            start, stop = temporal_window_bounds(t, len(jobs), self.cfg.temporal_window)
            for stale in [k for k in cache if k < start]:
                del cache[stale]
            window = [loaded[k] for k in range(start, stop)]
            if any(item is None for item in window):
                self._fail(job, ImageError("a frame of its temporal window could not be loaded"), result)
                continue
            try:
                started = time.perf_counter()
                hook = None
                if self.prior_hook is not None:
                    hook = lambda index, r0: self.prior_hook(jobs[index].index, r0)
                volume, report = extract_volume([f for f, _ in window], [p for _, p in window],
                                                self.cfg, hook, first_index=start, cache=cache)
                logger.info(f"Frame {job.index}: window [{start}, {stop}), "
                            f"{report.iterations_used} iterations, converged={report.converged}")
                self._finish(job, volume[t - start], report, time.perf_counter() - started, result)
            except Exception as e:
                self._fail(job, e, result)
        return result

    def run(self, jobs: Sequence[FrameJob], temporal: bool = False) -> BatchResult:
        if not jobs:
            raise ParameterError("no frames to process")
        ordered = sorted(jobs, key=lambda j: os.path.basename(j.frame_path))
        mode = 'spatio-temporal' if temporal else 'spatial'
        logger.info(f"Processing {len(ordered)} frames in {mode} mode")

        result = self.run_temporal(ordered) if temporal else self.run_spatial(ordered)
        result.report.log_summary()
        self.log_stats()
        return result

    def get_status(self) -> Dict:
        return {'stats': self.stats.copy(), 'config': self.cfg.to_dict()}

    def log_stats(self) -> None:
        done = max(self.stats['frames_processed'], 1)
        logger.info("Batch statistics:")
        logger.info(f"  Frames processed: {self.stats['frames_processed']}")
        logger.info(f"  Frames failed: {self.stats['frames_failed']}")
        logger.info(f"  Frames converged: {self.stats['frames_converged']}")
        logger.info(f"  Mean iterations: {self.stats['total_iterations'] / done:.1f}")
        logger.info(f"  Mean seconds per frame: {self.stats['total_seconds'] / done:.2f}")


def run_batch(jobs: Sequence[FrameJob], cfg: Optional[PipelineConfig] = None, temporal: bool = False,
              prior_hook: Optional[PriorHook] = None) -> BatchResult:
    return BatchRunner(cfg, prior_hook).run(jobs, temporal)


def ablation_variants(cfg: PipelineConfig) -> Dict[str, PipelineConfig]:
    """The configured agent set plus every leave-one-out subset of it"""
    variants = {'full': cfg}
    for name in AGENT_NAMES:
        if name in cfg.agents and len(cfg.agents) > 1:
            rest = tuple(a for a in cfg.agents if a != name)
            variants[f"without_{name}"] = replace(cfg, agents=rest)
    return variants


def run_ablation(jobs: Sequence[FrameJob], cfg: Optional[PipelineConfig] = None,
                 temporal: bool = False) -> pd.DataFrame:
    """Aggregate metrics of every ablation variant, one row each"""
    cfg = (cfg or PipelineConfig()).validate()
    rows = []
    for variant, variant_cfg in ablation_variants(cfg).items():
        logger.info(f"Ablation variant {variant}: agents {list(variant_cfg.agents)}")
        variant_jobs = [replace(job, output_path=os.path.join(os.path.dirname(job.output_path), variant,
                                                              os.path.basename(job.output_path)))
                        for job in jobs]
        result = run_batch(variant_jobs, variant_cfg, temporal)
        row = {'variant': variant, 'agents': ','.join(variant_cfg.agents), 'failures': len(result.failures)}
        row.update({k: result.report.aggregate().get(k, float('nan')) for k in ('iou', 'mae', 'contour_f')})
        rows.append(row)
    return pd.DataFrame(rows)


def discover_jobs(directory: str, output_dir: str) -> List[FrameJob]:
    """
    Batch layout: frames/ with the inputs, plate.<ext>, optional gt/ matched
    by file stem and optional manifest.txt listing frame file names.
    """
    frame_dir = os.path.join(directory, 'frames')
    if not os.path.isdir(frame_dir):
        raise ImageError(f"no frames/ folder in {directory}")
    plate_path = find_raster(directory, 'plate')
    if plate_path is None:
        raise ImageError(f"no plate image in {directory}")

    manifest = os.path.join(directory, 'manifest.txt')
    if os.path.exists(manifest):
        with open(manifest, 'r', encoding='utf-8') as f:
            names = [line.strip() for line in f if line.strip() and not line.startswith('#')]
    else:
        names = [name for name in os.listdir(frame_dir) if is_supported(name)]
    names.sort()

    gt_dir = os.path.join(directory, 'gt')
    jobs = []
    for index, name in enumerate(names):
        stem = os.path.splitext(name)[0]
        gt_path = find_raster(gt_dir, stem) if os.path.isdir(gt_dir) else None
        jobs.append(FrameJob(
            frame_path=os.path.join(frame_dir, name),
            plate_path=plate_path,
            output_path=os.path.join(output_dir, stem + '.png'),
            gt_path=gt_path,
            index=index,
        ))
    logger.info(f"Found {len(jobs)} frames in {directory}")
    return jobs
