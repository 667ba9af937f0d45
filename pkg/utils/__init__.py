from .dot_export import timeline_to_dot, write_dot
from .reporting import build_report, mann_whitney_greater, vargha_delaney_a12

__all__ = ['timeline_to_dot', 'write_dot', 'build_report', 'mann_whitney_greater', 'vargha_delaney_a12']
