from abc import ABC, abstractmethod
from typing import Any


class ISettingsManager(ABC):
    """Abstract interface for settings management"""

    @abstractmethod
    def get(self, key: str) -> Any:
        """Get a setting value by name"""
        pass

    @abstractmethod
    def set(self, key: str, value: Any) -> None:
        """Validate and set a setting value"""
        pass

    @abstractmethod
    def load_overrides(self, path: str) -> None:
        """Merge settings from a YAML mapping file"""
        pass

    @abstractmethod
    def get_all(self) -> dict:
        """Get all settings as a dictionary"""
        pass
