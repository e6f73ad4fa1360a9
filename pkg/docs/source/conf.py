"""Sphinx configuration for the pyspgls documentation."""

import pyspgls

project = "pyspgls"
author = "pyspgls contributors"
copyright = f"2024, {author}"
version = release = pyspgls.__version__

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.intersphinx",
    "sphinx.ext.mathjax",
    "sphinx_autodoc_typehints",
]

exclude_patterns = ["_build"]

autodoc_member_order = "bysource"
autodoc_default_options = {"members": True, "show-inheritance": True}
typehints_defaults = "comma"
always_document_param_types = False

html_theme = "sphinx_rtd_theme"
html_title = f"pyspgls {release}"
html_theme_options = {"navigation_depth": 2}

intersphinx_mapping = {
    "python": ("https://docs.python.org/3", None),
    "numpy": ("https://numpy.org/doc/stable", None),
    "scipy": ("https://docs.scipy.org/doc/scipy", None),
    "pandas": ("https://pandas.pydata.org/docs", None),
}
