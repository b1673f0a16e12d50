#include "rdsig/types.hpp"

#include <algorithm>

namespace rdsig {

void Flags::set(const std::string& flag) {
    auto it = std::lower_bound(items_.begin(), items_.end(), flag);
    if (it == items_.end() || *it != flag) items_.insert(it, flag);
}

void Flags::merge(const Flags& other) {
    for (const auto& f : other.items_) set(f);
}

bool Flags::has(const std::string& flag) const {
    return std::binary_search(items_.begin(), items_.end(), flag);
}

std::string Flags::joined(char sep) const {
    std::string out;
    for (const auto& f : items_) {
        if (!out.empty()) out.push_back(sep);
        out += f;
    }
    return out;
}

}  // namespace rdsig
