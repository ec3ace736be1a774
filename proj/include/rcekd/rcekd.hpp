/* Copyright 2026 The RCE-KD Lab Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/


#pragma once

#include "rcekd/core.hpp"
#include "rcekd/data.hpp"
#include "rcekd/model.hpp"
#include "rcekd/ranking.hpp"
#include "rcekd/distill.hpp"
#include "rcekd/theory.hpp"
#include "rcekd/evaluate.hpp"
#include "rcekd/trainer.hpp"
#include "rcekd/synthetic.hpp"
#include "rcekd/config.hpp"
#include "rcekd/report.hpp"
