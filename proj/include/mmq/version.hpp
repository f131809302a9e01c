// Copyright 2026 The MMQ Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace mmq {
inline constexpr const char* kVersion = "0.1.0";
}
