# -*- coding: utf-8 -*-
#
# latentloco documentation build configuration file.

import sys
import os

extensions = []

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = 'latentloco'
copyright = '2026, latentloco developers'

version = '0.1'
release = '0.1'

exclude_patterns = []
pygments_style = 'sphinx'

html_theme = 'default'
html_static_path = ['_static']
htmlhelp_basename = 'latentlocodoc'

latex_elements = {
}
latex_documents = [
  ('index', 'latentloco.tex', 'latentloco Documentation',
   'latentloco developers', 'manual'),
]

man_pages = [
    ('index', 'latentloco', 'latentloco Documentation',
     ['latentloco developers'], 1)
]
