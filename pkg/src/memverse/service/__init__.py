from .app import create_app
from .parametric import ParametricClient

__all__ = ["create_app", "ParametricClient"]
