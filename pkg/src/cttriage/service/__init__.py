from .app import TriageService, create_app
from .store import Store, StudyRecord

__all__ = ["TriageService", "create_app", "Store", "StudyRecord"]
