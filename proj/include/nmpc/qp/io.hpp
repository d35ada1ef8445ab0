#pragma once

#include <iosfwd>
#include <string>

#include "nmpc/qp/data.hpp"

namespace nmpc::qp {

// Versioned text dump: one labeled array per line, row-major entries printed
// with full round-trip precision; infinities as "inf"/"-inf". Used to pin
// regression fixtures.
void write_ocp_qp(std::ostream& os, const OcpQp& qp);
OcpQp read_ocp_qp(std::istream& is);

void write_ocp_qp_file(const std::string& path, const OcpQp& qp);
OcpQp read_ocp_qp_file(const std::string& path);

}  // namespace nmpc::qp
