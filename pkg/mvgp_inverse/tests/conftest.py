#    Licensed under the Apache License, Version 2.0 (the "License"); you may
#    not use this file except in compliance with the License. You may obtain
#    a copy of the License at
#
#         http://www.apache.org/licenses/LICENSE-2.0
#
#    Unless required by applicable law or agreed to in writing, software
#    distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
#    WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
#    License for the specific language governing permissions and limitations
#    under the License.

"""Pytest wiring for testscenarios.

stestr applies ``scenarios`` through each module's ``load_tests`` hook;
pytest ignores that hook, so expand scenario classes here instead.
"""

import unittest

from _pytest import unittest as pytest_unittest


def pytest_pycollect_makeitem(collector, name, obj):
    if not (isinstance(obj, type) and issubclass(obj, unittest.TestCase)):
        return None
    scenarios = obj.__dict__.get('scenarios')
    if not scenarios:
        return None
    items = []
    for scenario_name, attrs in scenarios:
        variant_name = '%s[%s]' % (name, scenario_name)
        variant = type(variant_name, (obj,),
                       dict(attrs, scenarios=None,
                            __module__=obj.__module__))
        item = pytest_unittest.UnitTestCase.from_parent(
            collector, name=variant_name)
        item.obj = variant
        items.append(item)
    return items
