"""Publication-style figures and summaries from mfchaos run directories.

This package reads only the documented artifacts (manifest.json and the CSV
files); it never recomputes any physics.  Plots are functions of the CSV
content alone, and every plotting routine returns the arrays it drew so that
they can be compared against the source data exactly.
"""

__version__ = "0.1.0"
