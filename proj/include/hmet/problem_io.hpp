#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>

#include "hmet/fields.hpp"

namespace hmet {

// On-disk problem description, plain text:
//
//   hmet-problem v1
//   dim 1
//   size 64
//   length 6.2831853071795862
//   rank 2
//   twist 0            (optional, r*r lines "re im", row major)
//   connection 0       (np*r*r lines "re im", point major then row major)
//   metric             (optional, same layout as a connection block)
//   endofield <name>   (optional named blocks, same layout)
//   end
//
// Every number must be finite; the reader rejects nan and inf.
struct Problem {
    GridPtr g;
    int rank = 0;
    ConnectionField C;
    std::optional<EndoField> metric0;
    std::map<std::string, EndoField> extra;
};

Problem load_problem(std::istream& is);
Problem load_problem_file(const std::string& path);
void save_problem(const Problem& pb, std::ostream& os);
void save_problem_file(const Problem& pb, const std::string& path);

} // namespace hmet
