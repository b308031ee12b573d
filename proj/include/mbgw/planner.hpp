#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mbgw/config.hpp"
#include "mbgw/errors.hpp"

namespace mbgw::plan {

struct PlannerPolicy {
    // Maximum run of unmapped items a range may read and discard.
    std::uint16_t max_gap_registers = 16;
    std::uint16_t max_gap_bits = 64;
    // Optional per-device split below the protocol maxima.
    std::optional<std::uint16_t> max_read_count;
};

struct RangeMember {
    std::size_t mapping_index = 0; // into the mapping list handed to plan()
    std::uint16_t relative_offset = 0;
    std::uint16_t width = 1;

    bool operator==(const RangeMember&) const = default;
};

struct ReadRange {
    config::Table table = config::Table::coil;
    std::uint16_t start_offset = 0;
    std::uint16_t count = 0;
    std::vector<RangeMember> members;

    bool operator==(const ReadRange&) const = default;
};

// Coalesces mapped windows per table into contiguous reads. Consecutive
// windows share a range iff the gap between them is within the policy and the
// merged count stays within the protocol (or per-device) read limit. Output is
// sorted by (table, start_offset) and deterministic.
std::vector<ReadRange> plan(const std::vector<config::IoMapping>& mappings, const PlannerPolicy& policy);

// Per-member slices of one range's raw data; filler items are discarded.
template <typename T>
std::vector<std::pair<std::size_t, std::vector<T>>> extract(const ReadRange& range,
                                                            const std::vector<T>& raw) {
    if (raw.size() != range.count)
        throw Error(Errc::width_mismatch, "range expects " + std::to_string(range.count) +
                                              " items, got " + std::to_string(raw.size()));
    std::vector<std::pair<std::size_t, std::vector<T>>> out;
    out.reserve(range.members.size());
    for (const RangeMember& m : range.members) {
        auto first = raw.begin() + m.relative_offset;
        out.emplace_back(m.mapping_index, std::vector<T>(first, first + m.width));
    }
    return out;
}

} // namespace mbgw::plan
