"""Standard diagnostic figures from simulator run directories.

This package reads only the documented CSV and manifest contracts of a run
directory; it never imports the simulator itself.
"""

__version__ = "0.1.0"
