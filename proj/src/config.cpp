#include "mbgw/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include "mbgw/wire.hpp"

namespace mbgw::config {

using nlohmann::json;

namespace {

constexpr const char* table_keys[] = {"coils", "discrete_inputs", "input_registers", "holding_registers"};
constexpr Table table_order[] = {Table::coil, Table::discrete_input, Table::input_register,
                                 Table::holding_register};

int table_prefix(Table t) {
    switch (t) {
    case Table::coil: return 0;
    case Table::discrete_input: return 1;
    case Table::input_register: return 3;
    case Table::holding_register: return 4;
    }
    return -1;
}

bool looks_like_integer(const std::string& s) {
    if (s.empty()) return false;
    std::size_t i = (s[0] == '-' || s[0] == '+') ? 1 : 0;
    if (i == s.size()) return false;
    return std::all_of(s.begin() + static_cast<std::ptrdiff_t>(i), s.end(),
                       [](unsigned char c) { return std::isdigit(c); });
}

bool looks_like_float(const std::string& s) {
    std::istringstream in(s);
    double d = 0;
    in >> d;
    return in && in.eof();
}

// yaml-cpp hands back untyped scalars; map them onto JSON types so YAML and
// JSON documents flow through one validator.
json yaml_to_json(const YAML::Node& node) {
    switch (node.Type()) {
    case YAML::NodeType::Null:
        return nullptr;
    case YAML::NodeType::Scalar: {
        const std::string& s = node.Scalar();
        if (node.Tag() != "!") { // "!" marks quoted scalars
            if (s == "true" || s == "True") return true;
            if (s == "false" || s == "False") return false;
            if (s == "null" || s == "~") return nullptr;
            if (looks_like_integer(s)) return json(std::stoll(s));
            if (looks_like_float(s)) return json(std::stod(s));
        }
        return s;
    }
    case YAML::NodeType::Sequence: {
        json arr = json::array();
        for (const auto& item : node) arr.push_back(yaml_to_json(item));
        return arr;
    }
    case YAML::NodeType::Map: {
        json obj = json::object();
        for (const auto& kv : node) obj[kv.first.as<std::string>()] = yaml_to_json(kv.second);
        return obj;
    }
    default:
        throw Error(Errc::syntax_error, "unsupported YAML node");
    }
}

std::int64_t require_int(const json& v, const std::string& what) {
    if (!v.is_number_integer())
        throw Error(Errc::syntax_error, what + " must be an integer");
    return v.get<std::int64_t>();
}

std::string require_string(const json& v, const std::string& what) {
    if (!v.is_string()) throw Error(Errc::syntax_error, what + " must be a string");
    return v.get<std::string>();
}

bool valid_topic_segment(const std::string& s) {
    return !s.empty() && s.find('/') == std::string::npos;
}

IoMapping make_mapping(const std::string& device, Table table, const std::string& io_name,
                       std::uint16_t offset, std::optional<iec::IecType> type) {
    IoMapping m;
    m.io_name = io_name;
    m.table = table;
    m.offset = offset;
    m.type = type;
    m.width = type ? type->register_width() : 1;
    m.read_topic = "/" + device + "/" + io_name;
    m.error_topic = m.read_topic + "/error";
    if (is_output_table(table)) m.write_topic = m.read_topic + "/write";
    if (m.width == 0) throw Error(Errc::syntax_error, io_name + ": zero-width mapping");
    if (static_cast<std::uint32_t>(offset) + m.width > 65536)
        throw Error(Errc::offset_out_of_range, io_name + ": window exceeds address space");
    if (!is_bit_table(table)) {
        const std::uint16_t limit =
            table == Table::holding_register ? wire::max_write_registers : wire::max_read_registers;
        if (m.width > limit)
            throw Error(Errc::offset_out_of_range,
                        io_name + ": " + std::to_string(m.width) + " registers exceed the " +
                            std::to_string(limit) + "-register transfer limit");
    }
    return m;
}

void parse_table_section(const std::string& device, Table table, const json& section,
                         std::vector<IoMapping>& out) {
    if (!section.is_object())
        throw Error(Errc::syntax_error, std::string(table_keys[static_cast<int>(table)]) + " must be a map");
    for (const auto& [io_name, entry] : section.items()) {
        if (!valid_topic_segment(io_name))
            throw Error(Errc::syntax_error, "io name '" + io_name + "' is not a valid topic segment");
        if (is_bit_table(table)) {
            // Bare 1-based address, implicitly Bool.
            const std::int64_t number = require_int(entry, io_name + " address");
            out.push_back(make_mapping(device, table, io_name, resolve_address(table, number), std::nullopt));
            continue;
        }
        if (!entry.is_object())
            throw Error(Errc::syntax_error, io_name + ": register entries need {address, type}");
        for (const auto& [k, _] : entry.items())
            if (k != "address" && k != "type" && k != "length")
                throw Error(Errc::syntax_error, io_name + ": unknown key '" + k + "'");
        if (!entry.contains("address") || !entry.contains("type"))
            throw Error(Errc::syntax_error, io_name + ": register entries need {address, type}");

        const std::int64_t number = require_int(entry.at("address"), io_name + " address");
        const std::string type_name = require_string(entry.at("type"), io_name + " type");
        const auto kind = iec::kind_from_name(type_name);
        if (!kind) throw Error(Errc::unknown_type, io_name + ": '" + type_name + "'");

        iec::IecType type{*kind, 0};
        if (*kind == iec::Kind::String) {
            if (!entry.contains("length"))
                throw Error(Errc::syntax_error, io_name + ": STRING needs a length");
            const std::int64_t len = require_int(entry.at("length"), io_name + " length");
            if (len < 1 || len > 250)
                throw Error(Errc::syntax_error, io_name + ": STRING length must be in [1, 250]");
            type.capacity = static_cast<std::uint16_t>(len);
        } else if (entry.contains("length")) {
            throw Error(Errc::syntax_error, io_name + ": length only applies to STRING");
        }
        out.push_back(make_mapping(device, table, io_name, resolve_address(table, number), type));
    }
}

DeviceConfig validate(const json& doc) {
    if (!doc.is_object()) throw Error(Errc::syntax_error, "config root must be a map");
    for (const auto& [k, _] : doc.items()) {
        static const char* known[] = {"name", "address", "port", "unit", "rate",
                                      "word_order", "max_read_count", "mapping"};
        if (std::find_if(std::begin(known), std::end(known),
                         [&](const char* s) { return k == s; }) == std::end(known))
            throw Error(Errc::syntax_error, "unknown key '" + k + "'");
    }

    DeviceConfig cfg;
    if (!doc.contains("name")) throw Error(Errc::syntax_error, "missing 'name'");
    cfg.name = require_string(doc.at("name"), "name");
    if (!valid_topic_segment(cfg.name))
        throw Error(Errc::invalid_address, "device name must be a single topic segment");

    if (!doc.contains("address")) throw Error(Errc::syntax_error, "missing 'address'");
    cfg.address = require_string(doc.at("address"), "address");
    if (cfg.address.empty()) throw Error(Errc::invalid_address, "empty device address");

    if (doc.contains("port")) {
        const std::int64_t port = require_int(doc.at("port"), "port");
        if (port < 1 || port > 65535) throw Error(Errc::invalid_address, "port out of range");
        cfg.port = static_cast<std::uint16_t>(port);
    }

    if (!doc.contains("unit")) throw Error(Errc::syntax_error, "missing 'unit'");
    const std::int64_t unit = require_int(doc.at("unit"), "unit");
    if (unit < 0 || unit > 255) throw Error(Errc::invalid_address, "unit out of range");
    cfg.unit = static_cast<std::uint8_t>(unit);

    if (!doc.contains("rate")) throw Error(Errc::syntax_error, "missing 'rate'");
    if (!doc.at("rate").is_number()) throw Error(Errc::invalid_rate, "rate must be a number");
    cfg.rate = doc.at("rate").get<double>();
    if (!(cfg.rate > 0.0)) throw Error(Errc::invalid_rate, "rate must be positive");

    if (doc.contains("word_order")) {
        const std::string wo = require_string(doc.at("word_order"), "word_order");
        if (wo == "high_word_first") cfg.word_order = iec::WordOrder::high_word_first;
        else if (wo == "low_word_first") cfg.word_order = iec::WordOrder::low_word_first;
        else throw Error(Errc::syntax_error, "word_order must be high_word_first or low_word_first");
    }

    if (doc.contains("max_read_count")) {
        const std::int64_t n = require_int(doc.at("max_read_count"), "max_read_count");
        if (n < 1 || n > wire::max_read_bits)
            throw Error(Errc::syntax_error, "max_read_count out of range");
        cfg.max_read_count = static_cast<std::uint16_t>(n);
    }

    if (doc.contains("mapping")) {
        const json& mapping = doc.at("mapping");
        if (!mapping.is_object()) throw Error(Errc::syntax_error, "mapping must be a map");
        for (const auto& [k, _] : mapping.items())
            if (std::find_if(std::begin(table_keys), std::end(table_keys),
                             [&](const char* s) { return k == s; }) == std::end(table_keys))
                throw Error(Errc::syntax_error, "unknown mapping table '" + k + "'");
        for (int i = 0; i < 4; ++i)
            if (mapping.contains(table_keys[i]))
                parse_table_section(cfg.name, table_order[i], mapping.at(table_keys[i]), cfg.mappings);
    }

    // Deterministic order regardless of source document ordering.
    std::sort(cfg.mappings.begin(), cfg.mappings.end(), [](const IoMapping& a, const IoMapping& b) {
        if (a.table != b.table) return static_cast<int>(a.table) < static_cast<int>(b.table);
        if (a.offset != b.offset) return a.offset < b.offset;
        return a.io_name < b.io_name;
    });

    for (std::size_t i = 1; i < cfg.mappings.size(); ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (cfg.mappings[i].io_name == cfg.mappings[j].io_name)
                throw Error(Errc::duplicate_io_name, cfg.mappings[i].io_name);

    return cfg;
}

} // namespace

const char* to_string(Table t) {
    switch (t) {
    case Table::coil: return "coil";
    case Table::discrete_input: return "discrete_input";
    case Table::input_register: return "input_register";
    case Table::holding_register: return "holding_register";
    }
    return "?";
}

bool is_bit_table(Table t) { return t == Table::coil || t == Table::discrete_input; }

bool is_output_table(Table t) { return t == Table::coil || t == Table::holding_register; }

std::uint16_t resolve_address(Table table, std::int64_t number) {
    if (number < 1) throw Error(Errc::offset_out_of_range, "addresses are 1-based");
    if (number <= 9999) return static_cast<std::uint16_t>(number - 1); // bare form, own table

    const int prefix = table_prefix(table);
    if (number <= 99999) {
        const auto p = static_cast<int>(number / 10000);
        const std::int64_t k = number % 10000;
        if (p != prefix || prefix == 0)
            throw Error(Errc::wrong_table_prefix, std::to_string(number) + " does not address a " +
                                                      to_string(table));
        if (k < 1) throw Error(Errc::offset_out_of_range, std::to_string(number));
        return static_cast<std::uint16_t>(k - 1);
    }
    if (number <= 999999) {
        const auto p = static_cast<int>(number / 100000);
        const std::int64_t k = number % 100000;
        if (p != prefix || prefix == 0)
            throw Error(Errc::wrong_table_prefix, std::to_string(number) + " does not address a " +
                                                      to_string(table));
        if (k < 1 || k > 65536) throw Error(Errc::offset_out_of_range, std::to_string(number));
        return static_cast<std::uint16_t>(k - 1);
    }
    throw Error(Errc::offset_out_of_range, std::to_string(number));
}

DeviceConfig parse_config(const std::string& text, Format format) {
    json doc;
    if (format == Format::yaml) {
        try {
            doc = yaml_to_json(YAML::Load(text));
        } catch (const YAML::Exception& e) {
            throw Error(Errc::syntax_error, e.what());
        }
    } else {
        try {
            doc = json::parse(text);
        } catch (const json::parse_error& e) {
            throw Error(Errc::syntax_error, e.what());
        }
    }
    return validate(doc);
}

DeviceConfig load_config_file(const std::string& path, std::optional<Format> format) {
    if (!format) {
        const auto dot = path.rfind('.');
        const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
        if (ext == "yaml" || ext == "yml") format = Format::yaml;
        else if (ext == "json") format = Format::json;
        else throw Error(Errc::syntax_error, "cannot infer config format from '" + path + "'");
    }
    std::ifstream in(path);
    if (!in) throw Error(Errc::syntax_error, "cannot open " + path);
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str(), *format);
}

std::string serialize(const DeviceConfig& cfg) {
    json doc;
    doc["name"] = cfg.name;
    doc["address"] = cfg.address;
    doc["port"] = cfg.port;
    doc["unit"] = cfg.unit;
    doc["rate"] = cfg.rate;
    doc["word_order"] =
        cfg.word_order == iec::WordOrder::high_word_first ? "high_word_first" : "low_word_first";
    if (cfg.max_read_count) doc["max_read_count"] = *cfg.max_read_count;

    json mapping = json::object();
    for (const IoMapping& m : cfg.mappings) {
        const char* key = table_keys[static_cast<int>(m.table)];
        if (is_bit_table(m.table)) {
            // Coils keep the bare form; other tables the 6-digit prefixed form.
            const std::int64_t number =
                m.table == Table::coil ? m.offset + 1 : table_prefix(m.table) * 100000 + m.offset + 1;
            mapping[key][m.io_name] = number;
        } else {
            json entry;
            entry["address"] = table_prefix(m.table) * 100000 + m.offset + 1;
            entry["type"] = m.type->name();
            if (m.type->kind == iec::Kind::String) entry["length"] = m.type->capacity;
            mapping[key][m.io_name] = entry;
        }
    }
    doc["mapping"] = mapping;
    return doc.dump(2);
}

} // namespace mbgw::config
