#pragma once

#include <string>

// Eigen-using headers first: <resolv.h> (pulled in by httplib) defines `_res`.
#include "chai/service.hpp"

#include <httplib.h>

namespace chai {

/// Mounts the JSON API under /api and, when given, static files at /.
void register_routes(httplib::Server& server, NegotiationService& service,
                     const std::string& static_dir = {});

}  // namespace chai
