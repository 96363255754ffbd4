# Configuration file for the Sphinx documentation builder.
#
# This file only contains a selection of the most common options. For a full
# list see the documentation:
# https://www.sphinx-doc.org/en/master/usage/configuration.html

# -- Project information -----------------------------------------------------

project = "lspkit"
copyright = "2026, lspkit contributors"
author = "lspkit contributors"
version = "0.1.0"  # this is docs version


# -- General configuration ---------------------------------------------------

extensions = []

# Add any paths that contain templates here, relative to this directory.
templates_path = ["_templates"]

# List of patterns, relative to source directory, that match files and
# directories to ignore when looking for source files.
exclude_patterns = ["_build", "Thumbs.db", ".DS_Store"]


# -- Options for HTML output -------------------------------------------------

html_theme = "furo"

html_static_path = []

rst_prolog = ".. |exit-codes| replace:: ``0`` ok, ``2`` config, ``3`` numeric, ``4`` I/O\n"
