import datetime
import os
import uuid
from typing import Dict, List, Optional

from tinydb import Query, TinyDB


class ModelRegistry:
    def __init__(self, db_path: str):
        """Initializes the TinyDB registry of fitted models."""
        os.makedirs(os.path.dirname(os.path.abspath(db_path)), exist_ok=True)
        self.db = TinyDB(db_path)
        self.models_table = self.db.table("models")
        self.model_query = Query()

    def register(
        self,
        model_path: str,
        data_path: str,
        fingerprint: str,
        d: int,
        k: int,
        gamma: float,
        dcs: float,
        restarts: int,
        seed: int,
    ) -> str:
        """Record a fitted model file; returns the new model id."""
        model_id = uuid.uuid4().hex[:12]
        self.models_table.insert(
            {
                "model_id": model_id,
                "model_path": os.path.abspath(model_path),
                "data_path": os.path.abspath(data_path),
                "fingerprint": fingerprint,
                "d": d,
                "k": k,
                "gamma": gamma,
                "dcs": dcs,
                "restarts": restarts,
                "seed": seed,
                "created_at": datetime.datetime.now().isoformat(),
            }
        )
        return model_id

    def list_models(self, fingerprint: Optional[str] = None) -> List[Dict]:
        """All records, oldest first, optionally only those fitted on one dataset."""
        if fingerprint:
            records = self.models_table.search(self.model_query.fingerprint == fingerprint)
        else:
            records = self.models_table.all()
        return sorted((dict(record) for record in records), key=lambda record: record["created_at"])

    def get(self, model_id: str) -> Optional[Dict]:
        record = self.models_table.get(self.model_query.model_id == model_id)
        return dict(record) if record else None

    def close(self):
        self.db.close()
