#include "mbgw/ndjson.hpp"
#include "mbgw/errors.hpp"
#include "mbgw/iec.hpp"

#include <cmath>
#include <limits>

namespace mbgw::ndjson {

using namespace std::chrono_literals;
using nlohmann::json;

namespace {

json float_to_json(double v) {
    if (std::isnan(v))
        return "NaN";
    if (std::isinf(v))
        return v > 0 ? "Infinity" : "-Infinity";
    return v;
}

} // namespace

json value_to_json(const IoValue& value) {
    return std::visit(
        [](const auto& v) -> json {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, bool>) {
                return v;
            } else if constexpr (std::is_same_v<T, BoolArray>) {
                json arr = json::array();
                for (bool b : v)
                    arr.push_back(b);
                return arr;
            } else if constexpr (std::is_same_v<T, char>) {
                return std::string(1, v);
            } else if constexpr (std::is_same_v<T, std::int64_t> ||
                                 std::is_same_v<T, std::uint64_t>) {
                return std::to_string(v);
            } else if constexpr (std::is_integral_v<T>) {
                return static_cast<std::int64_t>(v);
            } else if constexpr (std::is_floating_point_v<T>) {
                return float_to_json(static_cast<double>(v));
            } else {
                return v; // std::string
            }
        },
        value);
}

namespace {

[[noreturn]] void bad_shape(const config::IoMapping& m, const json& j, const char* expected) {
    throw Error(Errc::type_mismatch, m.io_name + " expects " + expected + ", got " +
                                         j.dump(-1, ' ', false, json::error_handler_t::replace));
}

std::int64_t get_int64(const json& j, const config::IoMapping& m) {
    if (j.is_number_unsigned()) {
        auto u = j.get<std::uint64_t>();
        if (u > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()))
            bad_shape(m, j, "a signed integer");
        return static_cast<std::int64_t>(u);
    }
    if (j.is_number_integer())
        return j.get<std::int64_t>();
    if (j.is_string()) {
        const auto& s = j.get_ref<const std::string&>();
        std::size_t pos = 0;
        try {
            std::int64_t v = std::stoll(s, &pos);
            if (pos == s.size())
                return v;
        } catch (const std::exception&) {
        }
    }
    bad_shape(m, j, "an integer");
}

std::uint64_t get_uint64(const json& j, const config::IoMapping& m) {
    if (j.is_number_unsigned())
        return j.get<std::uint64_t>();
    if (j.is_number_integer()) {
        auto v = j.get<std::int64_t>();
        if (v < 0)
            bad_shape(m, j, "an unsigned integer");
        return static_cast<std::uint64_t>(v);
    }
    if (j.is_string()) {
        const auto& s = j.get_ref<const std::string&>();
        if (!s.empty() && s[0] != '-') {
            std::size_t pos = 0;
            try {
                std::uint64_t v = std::stoull(s, &pos);
                if (pos == s.size())
                    return v;
            } catch (const std::exception&) {
            }
        }
    }
    bad_shape(m, j, "an unsigned integer");
}

double get_double(const json& j, const config::IoMapping& m) {
    if (j.is_number())
        return j.get<double>();
    if (j.is_string()) {
        const auto& s = j.get_ref<const std::string&>();
        if (s == "NaN")
            return std::numeric_limits<double>::quiet_NaN();
        if (s == "Infinity")
            return std::numeric_limits<double>::infinity();
        if (s == "-Infinity")
            return -std::numeric_limits<double>::infinity();
    }
    bad_shape(m, j, "a number");
}

template <typename T>
T narrow_int(const json& j, const config::IoMapping& m) {
    std::int64_t v = get_int64(j, m);
    if (v < std::numeric_limits<T>::min() || v > std::numeric_limits<T>::max())
        bad_shape(m, j, "an integer in range");
    return static_cast<T>(v);
}

template <typename T>
T narrow_uint(const json& j, const config::IoMapping& m) {
    std::uint64_t v = get_uint64(j, m);
    if (v > std::numeric_limits<T>::max())
        bad_shape(m, j, "an unsigned integer in range");
    return static_cast<T>(v);
}

BoolArray get_bool_array(const json& j, std::size_t width, const config::IoMapping& m) {
    if (!j.is_array() || j.size() != width)
        bad_shape(m, j, ("an array of " + std::to_string(width) + " booleans").c_str());
    BoolArray out(width);
    for (std::size_t i = 0; i < width; ++i) {
        if (!j[i].is_boolean())
            bad_shape(m, j, "an array of booleans");
        out[i] = j[i].get<bool>();
    }
    return out;
}

} // namespace

IoValue value_from_json(const json& j, const config::IoMapping& mapping) {
    if (config::is_bit_table(mapping.table) || !mapping.type) {
        if (j.is_boolean())
            return j.get<bool>();
        if (j.is_number_integer()) {
            auto v = get_int64(j, mapping);
            if (v == 0 || v == 1)
                return v == 1;
        }
        bad_shape(mapping, j, "a boolean");
    }

    using iec::Kind;
    switch (mapping.type->kind) {
    case Kind::Byte: return get_bool_array(j, 8, mapping);
    case Kind::Word: return get_bool_array(j, 16, mapping);
    case Kind::Dword: return get_bool_array(j, 32, mapping);
    case Kind::Lword: return get_bool_array(j, 64, mapping);
    case Kind::Sint: return narrow_int<std::int8_t>(j, mapping);
    case Kind::Int: return narrow_int<std::int16_t>(j, mapping);
    case Kind::Dint: return narrow_int<std::int32_t>(j, mapping);
    case Kind::Lint: return get_int64(j, mapping);
    case Kind::Usint: return narrow_uint<std::uint8_t>(j, mapping);
    case Kind::Uint: return narrow_uint<std::uint16_t>(j, mapping);
    case Kind::Udint: return narrow_uint<std::uint32_t>(j, mapping);
    case Kind::Ulint: return get_uint64(j, mapping);
    case Kind::Real: return static_cast<float>(get_double(j, mapping));
    case Kind::Lreal: return get_double(j, mapping);
    case Kind::Char: {
        if (j.is_string() && j.get_ref<const std::string&>().size() == 1)
            return j.get_ref<const std::string&>()[0];
        bad_shape(mapping, j, "a one-character string");
    }
    case Kind::String: {
        if (j.is_string())
            return j.get<std::string>();
        bad_shape(mapping, j, "a string");
    }
    }
    bad_shape(mapping, j, "a value");
}

std::string message_to_line(const bus::TopicMessage& msg) {
    json j{{"topic", msg.topic}, {"value", value_to_json(msg.value)}, {"ts_us", msg.ts_us}};
    return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

Server::Server(bus::TopicBus& bus, ServerOptions opts) : bus_(bus), opts_(std::move(opts)) {}

Server::~Server() { stop(); }

void Server::start() {
    listener_ = net::TcpListener::bind(opts_.host, opts_.port);
    port_ = listener_.port();
    stopping_ = false;
    accept_thread_ = std::thread([this] { accept_loop(); });
}

void Server::stop() {
    stopping_ = true;
    listener_.close();
    if (accept_thread_.joinable())
        accept_thread_.join();
    std::vector<std::shared_ptr<Conn>> conns;
    {
        std::lock_guard lk(conns_mu_);
        conns.swap(conns_);
    }
    for (auto& c : conns) {
        c->closing = true;
        c->stream.shutdown();
        std::shared_ptr<bus::Subscription> sub;
        {
            std::lock_guard lk(c->send_mu);
            sub = c->sub;
        }
        if (sub)
            sub->close();
        if (c->reader.joinable())
            c->reader.join();
        if (c->writer.joinable())
            c->writer.join();
    }
}

void Server::register_write_topic(const std::string& topic, WriteHandler handler) {
    if (!bus::topic_valid(topic))
        throw Error(Errc::invalid_topic, topic);
    std::lock_guard lk(writers_mu_);
    writers_[topic] = std::move(handler);
}

std::vector<std::string> Server::write_topics() const {
    std::lock_guard lk(writers_mu_);
    std::vector<std::string> out;
    out.reserve(writers_.size());
    for (const auto& [topic, _] : writers_)
        out.push_back(topic);
    return out;
}

void Server::accept_loop() {
    while (!stopping_) {
        std::optional<net::TcpStream> peer;
        try {
            peer = listener_.accept(100ms);
        } catch (const Error&) {
            break;
        }
        if (!peer)
            continue;
        auto conn = std::make_shared<Conn>();
        conn->stream = std::move(*peer);
        {
            std::lock_guard lk(conns_mu_);
            std::erase_if(conns_, [](const std::shared_ptr<Conn>& c) {
                return c->closing && !c->reader.joinable();
            });
            conns_.push_back(conn);
        }
        conn->reader = std::thread([this, conn] { reader_loop(conn); });
    }
}

void Server::reader_loop(const std::shared_ptr<Conn>& conn) {
    std::array<std::uint8_t, 4096> buf;
    std::string acc;
    while (!stopping_ && !conn->closing) {
        std::size_t n = 0;
        try {
            n = conn->stream.recv_some(buf, 100ms);
        } catch (const Error& e) {
            if (e.code() == Errc::timeout)
                continue;
            break;
        }
        if (n == 0)
            break;
        const std::int64_t rx = net::mono_us();
        acc.append(reinterpret_cast<const char*>(buf.data()), n);
        std::size_t start = 0;
        for (;;) {
            std::size_t nl = acc.find('\n', start);
            if (nl == std::string::npos)
                break;
            std::string line = acc.substr(start, nl - start);
            if (!line.empty() && line.back() == '\r')
                line.pop_back();
            start = nl + 1;
            if (!line.empty())
                handle_line(conn, line, rx);
        }
        acc.erase(0, start);
    }
    conn->closing = true;
    if (conn->sub)
        conn->sub->close();
    if (conn->writer.joinable())
        conn->writer.join();
    conn->stream.close();
}

void Server::writer_loop(const std::shared_ptr<Conn>& conn) {
    bus::TopicMessage msg;
    while (!stopping_ && !conn->closing) {
        if (!conn->sub->pop(msg, 100ms))
            continue;
        try {
            send_line(conn, message_to_line(msg));
        } catch (const Error&) {
            conn->closing = true;
            conn->stream.shutdown();
            break;
        }
    }
}

void Server::send_line(const std::shared_ptr<Conn>& conn, const std::string& line) {
    std::string framed = line + "\n";
    std::lock_guard lk(conn->send_mu);
    conn->stream.send_all(
        std::span(reinterpret_cast<const std::uint8_t*>(framed.data()), framed.size()));
}

void Server::send_error(const std::shared_ptr<Conn>& conn, const std::string& message) {
    json j{{"error", message}};
    try {
        send_line(conn, j.dump(-1, ' ', false, json::error_handler_t::replace));
    } catch (const Error&) {
        conn->closing = true;
    }
}

void Server::handle_line(const std::shared_ptr<Conn>& conn, const std::string& line,
                         std::int64_t rx_mono_us) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        send_error(conn, "malformed line: not a JSON object");
        return;
    }
    const std::string op = j.value("op", "");
    if (op == "sub") {
        if (!j.contains("topic") || !j["topic"].is_string()) {
            send_error(conn, "malformed line: sub needs a topic string");
            return;
        }
        const std::string pattern = j["topic"].get<std::string>();
        try {
            if (!conn->sub) {
                auto sub = bus_.subscribe(pattern, opts_.queue_depth);
                {
                    std::lock_guard lk(conn->send_mu);
                    conn->sub = std::move(sub);
                }
                conn->writer = std::thread([this, conn] { writer_loop(conn); });
            } else {
                bus_.add_pattern(*conn->sub, pattern);
            }
        } catch (const Error& e) {
            send_error(conn, e.what());
        }
        return;
    }
    if (op == "pub") {
        if (!j.contains("topic") || !j["topic"].is_string() || !j.contains("value")) {
            send_error(conn, "malformed line: pub needs topic and value");
            return;
        }
        const std::string topic = j["topic"].get<std::string>();
        if (pub_observer_)
            pub_observer_(topic, rx_mono_us);
        WriteHandler handler;
        {
            std::lock_guard lk(writers_mu_);
            auto it = writers_.find(topic);
            if (it != writers_.end())
                handler = it->second;
        }
        if (!handler) {
            send_error(conn, "unknown topic: " + topic);
            return;
        }
        try {
            handler(topic, j["value"]);
        } catch (const Error& e) {
            send_error(conn, e.what());
        }
        return;
    }
    send_error(conn, "malformed line: unknown op \"" + op + "\"");
}

} // namespace mbgw::ndjson
