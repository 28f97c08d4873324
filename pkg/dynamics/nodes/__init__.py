# dynamics/nodes/__init__.py

from .experiment_nodes import ExperimentNodes

__all__ = ['ExperimentNodes']
