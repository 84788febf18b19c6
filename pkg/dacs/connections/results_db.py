from sqlalchemy import create_engine, select
from sqlalchemy.orm import sessionmaker, scoped_session
from sqlalchemy.exc import OperationalError, SQLAlchemyError
from typing import Iterable, List, Optional
import logging
import tenacity
import os

from dacs.errors import StoreError
from dacs.models.replicate import ReplicateRow, ReplicateRowPydantic, create_all_tables

logger = logging.getLogger(__name__)


class ResultsDB:
    """SQLAlchemy client for simulation sweep results."""

    def __init__(self, url: Optional[str] = None):
        """Open the results store with retry logic and make sure the tables exist."""
        self.url = url or os.getenv("DACS_RESULTS_URL", "sqlite:///dacs_results.db")
        self.engine = None
        self.Session = None
        try:
            self._connect_with_retries()
        except OperationalError as e:
            raise StoreError(f"results store at {self.url} is unreachable: {e}") from e

    @tenacity.retry(
        stop=tenacity.stop_after_attempt(3),
        wait=tenacity.wait_exponential(multiplier=1, min=4, max=10),
        retry=tenacity.retry_if_exception_type(OperationalError),
        reraise=True,
        before_sleep=lambda retry_state: logger.warning(f"Retrying results store connection: attempt {retry_state.attempt_number}")
    )
    def _connect_with_retries(self):
        try:
            self.engine = create_engine(self.url)
            create_all_tables(self.engine)
            self.Session = scoped_session(sessionmaker(bind=self.engine))
            logger.info(f"Connected to results store at {self.url}")
        except Exception as e:
            logger.error(f"Failed to connect to results store: {e}")
            raise

    def get_session(self):
        """Get a new SQLAlchemy session."""
        return self.Session()

    def store_rows(self, rows: Iterable[ReplicateRowPydantic]) -> int:
        """Insert validated replicate rows; returns how many were written."""
        session = self.get_session()
        count = 0
        try:
            for row in rows:
                session.add(ReplicateRow(**row.model_dump(exclude_none=True)))
                count += 1
            session.commit()
            logger.info(f"Stored {count} replicate rows")
            return count
        except SQLAlchemyError as e:
            session.rollback()
            logger.error(f"Error storing replicate rows: {e}")
            raise StoreError(str(e)) from e
        finally:
            session.close()

    def load_sweep(self, sweep_id: str) -> List[ReplicateRowPydantic]:
        session = self.get_session()
        try:
            result = session.execute(
                select(ReplicateRow).where(ReplicateRow.sweep_id == sweep_id).order_by(ReplicateRow.id)
            )
            return [ReplicateRowPydantic.model_validate(r) for r in result.scalars()]
        except SQLAlchemyError as e:
            logger.error(f"Error loading sweep {sweep_id}: {e}")
            raise StoreError(str(e)) from e
        finally:
            session.close()

    def close(self):
        """Dispose of the engine and close connections."""
        if self.engine:
            self.Session.remove()
            self.engine.dispose()
            logger.info("Results store engine disposed")
