#!/usr/bin/env python
"""
Apply the procrastinate schema to IMPEDANS_QUEUE_DATABASE_URL.

Run once before the first `impedans sweep --defer`.
"""
import asyncio
import logging
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from impedans.queue import app as queue_app

logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
logger = logging.getLogger(__name__)


async def main() -> int:
    async with queue_app.open_async():
        try:
            await queue_app.schema_manager.apply_schema_async()
        except Exception as e:
            logger.warning(f"Schema may already exist: {e}")
            return 0
    logger.info("Procrastinate schema applied")
    return 0


if __name__ == "__main__":
    sys.exit(asyncio.run(main()))
