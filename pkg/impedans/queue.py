"""
Procrastinate job queue for sweep cells.

`impedans sweep --defer` enqueues one job per unfinished cell; `impedans
worker` runs them. Cells retry with exponential backoff on transient I/O
errors only; domain and numeric failures are recorded by run_cell itself.
"""

import asyncio
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import procrastinate
from procrastinate.retry import BaseRetryStrategy, RetryDecision

from impedans.config import RunConfig, get_settings, parse_run_config
from impedans.sweep import CELL_FILE, SweepCell, SweepGrid, run_cell
from impedans.tracing import (
    detach_trace_context,
    extract_trace_context,
    get_current_trace_id,
    inject_trace_context,
    trace_stage,
)

settings = get_settings()
logger = logging.getLogger(__name__)


class ExponentialBackoffStrategy(BaseRetryStrategy):
    """
    Exponential backoff: delay = min(base_delay * 2^attempts, max_delay).

    Only exceptions matching retry_exceptions are retried.
    """

    def __init__(
        self,
        max_attempts: int = 3,
        base_delay: float = 2.0,
        max_delay: float = 60.0,
        retry_exceptions: Sequence[type[BaseException]] = (OSError,),
    ):
        self.max_attempts = max_attempts
        self.base_delay = base_delay
        self.max_delay = max_delay
        self.retry_exceptions = tuple(retry_exceptions)

    def delay_for(self, attempts: int) -> Optional[int]:
        """Seconds before the next attempt, or None once attempts are exhausted."""
        if attempts >= self.max_attempts:
            return None
        return int(min(self.base_delay * (2**attempts), self.max_delay))

    def get_retry_decision(self, *, exception: BaseException, job) -> Optional[RetryDecision]:
        if not isinstance(exception, self.retry_exceptions):
            return None
        delay = self.delay_for(job.attempts)
        if delay is None:
            return None
        logger.warning(f"Job {job.id}: {type(exception).__name__}, retrying in {delay} s")
        return RetryDecision(retry_in={"seconds": delay})


app = procrastinate.App(
    connector=procrastinate.PsycopgConnector(conninfo=settings.queue_database_url),
    import_paths=["impedans.queue"],
)


@app.task(
    name="impedans.run_sweep_cell",
    queue=settings.queue_name,
    retry=ExponentialBackoffStrategy(
        max_attempts=settings.cell_max_attempts,
        base_delay=settings.cell_retry_base_delay,
        max_delay=settings.cell_retry_max_delay,
    ),
    pass_context=True,
)
async def run_sweep_cell(
    context,
    config: Dict[str, Any],
    cell: Dict[str, Any],
    output_dir: str,
    trace_context: Optional[Dict[str, str]] = None,
) -> Dict[str, Any]:
    """
    Run one sweep cell in a worker thread.

    Args:
        context: Procrastinate job context
        config: Base RunConfig as JSON
        cell: SweepCell payload
        output_dir: Sweep output directory
        trace_context: W3C carrier from the deferring span
    """
    token = extract_trace_context(trace_context)
    try:
        sweep_cell = SweepCell.from_payload(cell)
        with trace_stage(
            "queued_cell", job_id=context.job.id, attempt=context.job.attempts, cell=sweep_cell.cell_id
        ):
            logger.info(
                f"Job {context.job.id}: cell {sweep_cell.cell_id} "
                f"(attempt {context.job.attempts}), trace_id={get_current_trace_id()}"
            )
            outcome = await asyncio.to_thread(
                run_cell, parse_run_config(config, source="job payload"), sweep_cell, Path(output_dir)
            )
            return outcome.model_dump(mode="json")
    finally:
        detach_trace_context(token)


async def enqueue_cells(config: RunConfig, grid: SweepGrid, output_dir: Path) -> list[int]:
    """Defer every unfinished cell on an already open app."""
    payload = config.model_dump(mode="json")
    job_ids = []
    with trace_stage("sweep_defer", cells=len(grid.cells())):
        carrier = inject_trace_context()
        for cell in grid.cells():
            if (Path(output_dir) / cell.cell_id / CELL_FILE).exists():
                logger.info(f"Cell {cell.cell_id}: already finished, not deferring")
                continue
            job_id = await run_sweep_cell.defer_async(
                config=payload,
                cell=cell.to_payload(),
                output_dir=str(output_dir),
                trace_context=carrier,
            )
            job_ids.append(job_id)
    logger.info(f"Deferred {len(job_ids)} cells on queue {settings.queue_name!r}")
    return job_ids


async def defer_sweep(config: RunConfig, grid: SweepGrid, output_dir: Path) -> list[int]:
    async with app.open_async():
        return await enqueue_cells(config, grid, output_dir)


async def run_worker(concurrency: Optional[int] = None, wait: bool = True) -> None:
    """Process sweep cells until interrupted (or until the queue is empty if not wait)."""
    concurrency = concurrency or settings.worker_concurrency
    async with app.open_async():
        logger.info(f"Worker listening on {settings.queue_name!r} (concurrency={concurrency})")
        await app.run_worker_async(queues=[settings.queue_name], concurrency=concurrency, wait=wait)
