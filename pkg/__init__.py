
# This file is part of Fedsparse
# 
# Fedsparse is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
# 
# Fedsparse is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
# 
# You should have received a copy of the GNU General Public License
# along with Fedsparse.  If not, see <http://www.gnu.org/licenses/>.

__author__                      = "Fedsparse developers"
__copyright__                   = "Copyright (c) 2026 Fedsparse developers"
__license__                     = "GNU General Public License, Version 3 (or later)"

__all__                         = ["sparse_ts", "nn", "model", "federation", "pool_service", "synth", "harness", "misc"]
