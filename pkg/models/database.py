import json
from datetime import datetime
from typing import Any, Dict, List

from sqlalchemy import Column, DateTime, Integer, LargeBinary, String, Text, create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

from config import Config
from models.errors import CheckpointError

Base = declarative_base()


class CheckpointMeta(Base):
    __tablename__ = "checkpoint_meta"

    id = Column(Integer, primary_key=True)
    format_version = Column(Integer, nullable=False)
    tool_version = Column(String(20), nullable=False)
    schedule_index = Column(Integer, nullable=False)  # next schedule to run
    steps_done = Column(Integer, nullable=False)
    agent_kind = Column(String(20), nullable=False)
    rng_state = Column(Text, nullable=False)
    created_at = Column(DateTime, default=datetime.utcnow)


class StateRow(Base):
    __tablename__ = "states"

    state_id = Column(Integer, primary_key=True)
    first_seen_step = Column(Integer, nullable=False)
    item_count = Column(Integer, nullable=False)
    minima = Column(LargeBinary, nullable=False)


class QRow(Base):
    __tablename__ = "qtable"

    state_id = Column(Integer, primary_key=True)
    q_values = Column(Text, nullable=False)


class CheckpointStore:
    """Per-campaign SQLite checkpoint: policy, registry representatives and RNG state"""

    def __init__(self, path):
        self.path = str(path)
        self.engine = create_engine(f"sqlite:///{self.path}")
        self.SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=self.engine)

    def create_tables(self):
        Base.metadata.create_all(bind=self.engine)

    def save(self, schedule_index: int, steps_done: int, agent_kind: str, rng_state: Dict[str, Any],
             states: List[Dict[str, Any]], q_rows: Dict[str, List[float]]):
        self.create_tables()
        db = self.SessionLocal()
        try:
            db.query(CheckpointMeta).delete()
            db.query(StateRow).delete()
            db.query(QRow).delete()
            db.add(CheckpointMeta(
                id=1,
                format_version=Config.CHECKPOINT_FORMAT_VERSION,
                tool_version=Config.TOOL_VERSION,
                schedule_index=schedule_index,
                steps_done=steps_done,
                agent_kind=agent_kind,
                rng_state=json.dumps(rng_state),
            ))
            for state in states:
                db.add(StateRow(**state))
            for state_id, values in q_rows.items():
                db.add(QRow(state_id=int(state_id), q_values=json.dumps(values)))
            db.commit()
        except Exception:
            db.rollback()
            raise
        finally:
            db.close()

    def load(self) -> Dict[str, Any]:
        db = self.SessionLocal()
        try:
            meta = db.get(CheckpointMeta, 1)
            if meta is None:
                raise CheckpointError(f"no checkpoint in {self.path}")
            if meta.format_version != Config.CHECKPOINT_FORMAT_VERSION:
                raise CheckpointError(
                    f"checkpoint format {meta.format_version} unsupported (expected {Config.CHECKPOINT_FORMAT_VERSION})"
                )
            return {
                "tool_version": meta.tool_version,
                "schedule_index": meta.schedule_index,
                "steps_done": meta.steps_done,
                "agent_kind": meta.agent_kind,
                "rng_state": json.loads(meta.rng_state),
                "states": [
                    {"state_id": s.state_id, "first_seen_step": s.first_seen_step,
                     "item_count": s.item_count, "minima": s.minima}
                    for s in db.query(StateRow).order_by(StateRow.state_id)
                ],
                "q_rows": {str(q.state_id): json.loads(q.q_values) for q in db.query(QRow).order_by(QRow.state_id)},
            }
        except CheckpointError:
            raise
        except Exception as exc:
            raise CheckpointError(f"unreadable checkpoint {self.path}: {exc}") from exc
        finally:
            db.close()

    def dispose(self):
        self.engine.dispose()
