/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.
*/

#pragma once

#include "pprog/benchmark.hpp"
#include "pprog/context.hpp"
#include "pprog/error.hpp"
#include "pprog/fmi.hpp"
#include "pprog/mailbox.hpp"
#include "pprog/message.hpp"
#include "pprog/runtime.hpp"
#include "pprog/service.hpp"
#include "pprog/topology.hpp"
#include "pprog/trace.hpp"
#include "pprog/transmission.hpp"
#include "pprog/cli.hpp"
