# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
# implied.
# See the License for the specific language governing permissions and
# limitations under the License.

# mvgp-inverse Release Notes documentation build configuration file

# -- General configuration ------------------------------------------------

extensions = [
    'openstackdocstheme',
    'reno.sphinxext',
]

# openstackdocstheme options
openstackdocs_repo_name = 'mvgp-inverse'
openstackdocs_bug_project = 'mvgp-inverse'
openstackdocs_bug_tag = ''
openstackdocs_auto_name = False

# The suffix of source filenames.
source_suffix = '.rst'

# The master toctree document.
master_doc = 'index'

# General information about the project.
project = u'mvgp-inverse Release Notes'
copyright = u'2026, mvgp-inverse Developers'

# Release notes are version independent.
release = ''
version = ''

exclude_patterns = []

# The name of the Pygments (syntax highlighting) style to use.
pygments_style = 'native'

# -- Options for HTML output ----------------------------------------------

html_theme = 'openstackdocs'
html_static_path = ['_static']
htmlhelp_basename = 'MvgpInverseReleaseNotesdoc'

# -- Options for Internationalization output ------------------------------
locale_dirs = ['locale/']
