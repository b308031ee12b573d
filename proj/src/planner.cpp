#include "mbgw/planner.hpp"

#include <algorithm>

#include "mbgw/wire.hpp"

namespace mbgw::plan {

std::vector<ReadRange> plan(const std::vector<config::IoMapping>& mappings, const PlannerPolicy& policy) {
    std::vector<ReadRange> out;

    for (config::Table table : {config::Table::coil, config::Table::discrete_input,
                                config::Table::input_register, config::Table::holding_register}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < mappings.size(); ++i)
            if (mappings[i].table == table) idx.push_back(i);
        if (idx.empty()) continue;

        std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            return mappings[a].offset < mappings[b].offset;
        });

        const bool bits = config::is_bit_table(table);
        const std::uint16_t proto_limit = bits ? wire::max_read_bits : wire::max_read_registers;
        const std::uint16_t limit =
            policy.max_read_count ? std::min(proto_limit, *policy.max_read_count) : proto_limit;
        const std::uint16_t max_gap = bits ? policy.max_gap_bits : policy.max_gap_registers;

        ReadRange range;
        std::uint32_t range_end = 0; // one past the last mapped item in the open range

        auto flush = [&] {
            if (!range.members.empty()) {
                range.count = static_cast<std::uint16_t>(range_end - range.start_offset);
                out.push_back(std::move(range));
                range = {};
            }
        };

        for (std::size_t i : idx) {
            const config::IoMapping& m = mappings[i];
            if (m.width > limit)
                throw Error(Errc::count_out_of_range,
                            m.io_name + ": width " + std::to_string(m.width) +
                                " exceeds the read limit of " + std::to_string(limit));
            if (!range.members.empty()) {
                if (m.offset < range_end)
                    throw Error(Errc::overlapping_mappings,
                                m.io_name + " overlaps a previous window in table " +
                                    config::to_string(table));
                const std::uint32_t gap = m.offset - range_end;
                const std::uint32_t merged = m.offset + m.width - range.start_offset;
                if (gap > max_gap || merged > limit) flush();
            }
            if (range.members.empty()) {
                range.table = table;
                range.start_offset = m.offset;
            }
            range.members.push_back(
                {i, static_cast<std::uint16_t>(m.offset - range.start_offset), m.width});
            range_end = m.offset + m.width;
        }
        flush();
    }
    return out;
}

} // namespace mbgw::plan
