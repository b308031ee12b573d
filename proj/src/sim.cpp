#include "mbgw/sim.hpp"
#include "mbgw/iec.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace mbgw::sim {

using namespace std::chrono_literals;
using nlohmann::json;

std::string to_json_line(const RequestRecord& r) {
    json j{{"conn", r.conn},   {"seq", r.seq},
           {"tid", r.tid},     {"unit", r.unit},
           {"fc", r.fc},       {"start", r.start},
           {"count", r.count}, {"exception", r.exception},
           {"rx_mono_us", r.rx_mono_us},   {"tx_mono_us", r.tx_mono_us},
           {"rx_epoch_us", r.rx_epoch_us}, {"tx_epoch_us", r.tx_epoch_us}};
    return j.dump();
}

SlaveServer::SlaveServer(Options opts)
    : opts_(std::move(opts)), coils_(65536), discrete_inputs_(65536), input_registers_(65536),
      holding_registers_(65536), faults_(opts_.faults) {}

SlaveServer::~SlaveServer() { stop(); }

void SlaveServer::start() {
    listener_ = net::TcpListener::bind(opts_.host, opts_.port);
    port_ = listener_.port();
    stopping_ = false;
    accept_thread_ = std::thread([this] { accept_loop(); });
}

void SlaveServer::stop() {
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
        c->stream.shutdown();
        if (c->thread.joinable())
            c->thread.join();
    }
}

void SlaveServer::accept_loop() {
    std::uint64_t next_id = 0;
    while (!stopping_) {
        std::optional<net::TcpStream> peer;
        try {
            peer = listener_.accept(100ms);
        } catch (const Error&) {
            break; // listener closed
        }
        reap_finished();
        if (!peer)
            continue;
        ++accepted_;
        auto conn = std::make_shared<Conn>();
        conn->stream = std::move(*peer);
        const std::uint64_t id = ++next_id;
        {
            std::lock_guard lk(conns_mu_);
            conns_.push_back(conn);
        }
        conn->thread = std::thread([this, conn, id] {
            serve(conn->stream, id);
            conn->stream.shutdown(); // make the drop visible to the peer now
            conn->done = true;
        });
    }
}

void SlaveServer::reap_finished() {
    std::vector<std::shared_ptr<Conn>> dead;
    {
        std::lock_guard lk(conns_mu_);
        for (auto it = conns_.begin(); it != conns_.end();) {
            if ((*it)->done) {
                dead.push_back(std::move(*it));
                it = conns_.erase(it);
            } else {
                ++it;
            }
        }
    }
    for (auto& c : dead)
        if (c->thread.joinable())
            c->thread.join();
}

void SlaveServer::serve(net::TcpStream& stream, std::uint64_t conn_id) {
    wire::FrameReassembler reassembler;
    std::array<std::uint8_t, 4096> buf;
    std::uint64_t seq = 0;

    while (!stopping_) {
        std::size_t n = 0;
        try {
            n = stream.recv_some(buf, 100ms);
        } catch (const Error& e) {
            if (e.code() == Errc::timeout)
                continue;
            return;
        }
        if (n == 0)
            return;
        try {
            reassembler.feed(std::span(buf.data(), n));
        } catch (const Error&) {
            return; // unframeable stream, drop the connection
        }

        std::vector<std::uint8_t> adu;
        while (reassembler.next(adu)) {
            RequestRecord rec;
            rec.conn = conn_id;
            rec.seq = ++seq;
            rec.rx_mono_us = net::mono_us();
            rec.rx_epoch_us = net::epoch_us();
            rec.tid = static_cast<std::uint16_t>((adu[0] << 8) | adu[1]);
            rec.unit = adu[6];
            rec.fc = static_cast<std::uint8_t>(adu[7] & 0x7F);

            FaultPolicy faults;
            {
                std::lock_guard lk(faults_mu_);
                faults = faults_;
            }

            wire::ResponsePdu response;
            try {
                auto [header, request] = wire::decode_request(adu);
                response = execute(request, rec);
            } catch (const Error& e) {
                if (e.code() != Errc::unknown_function)
                    return; // malformed request, drop the connection
                rec.exception = 1;
                response = wire::ExceptionResponse{static_cast<wire::FunctionCode>(rec.fc), 1};
            }

            if (faults.latency.count() > 0)
                std::this_thread::sleep_for(faults.latency);

            wire::MbapHeader header{rec.tid, 0, 0, rec.unit};
            try {
                stream.send_all(wire::encode_response(header, response));
            } catch (const Error&) {
                return;
            }
            rec.tx_mono_us = net::mono_us();
            rec.tx_epoch_us = net::epoch_us();
            ++served_;
            append_record(rec);

            if (faults.drop_after && seq >= *faults.drop_after)
                return;
        }
    }
}

wire::ResponsePdu SlaveServer::execute(const wire::RequestPdu& request, RequestRecord& rec) {
    struct Meta {
        config::Table table;
        wire::FunctionCode fc;
    };
    const Meta meta = std::visit(
        [](const auto& req) -> Meta {
            using T = std::decay_t<decltype(req)>;
            if constexpr (std::is_same_v<T, wire::ReadRequest>) {
                switch (req.fc) {
                case wire::FunctionCode::read_coils: return {config::Table::coil, req.fc};
                case wire::FunctionCode::read_discrete_inputs:
                    return {config::Table::discrete_input, req.fc};
                case wire::FunctionCode::read_holding_registers:
                    return {config::Table::holding_register, req.fc};
                default: return {config::Table::input_register, req.fc};
                }
            } else if constexpr (std::is_same_v<T, wire::WriteSingleRequest>) {
                return {req.fc == wire::FunctionCode::write_single_coil
                            ? config::Table::coil
                            : config::Table::holding_register,
                        req.fc};
            } else if constexpr (std::is_same_v<T, wire::WriteBitsRequest>) {
                return {config::Table::coil, wire::FunctionCode::write_multiple_coils};
            } else {
                return {config::Table::holding_register, wire::FunctionCode::write_multiple_registers};
            }
        },
        request);

    auto fault_code = [&]() -> std::optional<std::uint8_t> {
        std::lock_guard lk(faults_mu_);
        return faults_.exception_code[static_cast<std::size_t>(meta.table)];
    }();

    auto reject = [&](std::uint8_t code) -> wire::ResponsePdu {
        rec.exception = code;
        return wire::ExceptionResponse{meta.fc, code};
    };

    return std::visit(
        [&](const auto& req) -> wire::ResponsePdu {
            using T = std::decay_t<decltype(req)>;
            std::lock_guard lk(mem_mu_);
            if constexpr (std::is_same_v<T, wire::ReadRequest>) {
                rec.start = req.start;
                rec.count = req.count;
                const bool bits = config::is_bit_table(meta.table);
                const std::uint16_t limit =
                    bits ? wire::max_read_bits : wire::max_read_registers;
                if (fault_code)
                    return reject(*fault_code);
                if (req.count < 1 || req.count > limit)
                    return reject(3);
                if (static_cast<std::uint32_t>(req.start) + req.count > 65536)
                    return reject(2);
                if (bits) {
                    const auto& table =
                        meta.table == config::Table::coil ? coils_ : discrete_inputs_;
                    std::vector<bool> values(req.count);
                    for (std::uint16_t i = 0; i < req.count; ++i)
                        values[i] = table[req.start + i] != 0;
                    return wire::ReadBitsResponse{meta.fc, iec::encode_bits(values)};
                }
                const auto& table = meta.table == config::Table::holding_register
                                        ? holding_registers_
                                        : input_registers_;
                return wire::ReadWordsResponse{
                    meta.fc, std::vector<std::uint16_t>(table.begin() + req.start,
                                                        table.begin() + req.start + req.count)};
            } else if constexpr (std::is_same_v<T, wire::WriteSingleRequest>) {
                rec.start = req.address;
                rec.count = 1;
                if (fault_code)
                    return reject(*fault_code);
                if (meta.table == config::Table::coil) {
                    if (req.value != 0x0000 && req.value != 0xFF00)
                        return reject(3);
                    coils_[req.address] = req.value == 0xFF00 ? 1 : 0;
                } else {
                    holding_registers_[req.address] = req.value;
                }
                return wire::WriteAckResponse{meta.fc, req.address, req.value};
            } else if constexpr (std::is_same_v<T, wire::WriteBitsRequest>) {
                rec.start = req.start;
                rec.count = static_cast<std::uint16_t>(req.bits.size());
                if (fault_code)
                    return reject(*fault_code);
                if (req.bits.empty() || req.bits.size() > wire::max_write_bits)
                    return reject(3);
                if (static_cast<std::uint32_t>(req.start) + req.bits.size() > 65536)
                    return reject(2);
                for (std::size_t i = 0; i < req.bits.size(); ++i)
                    coils_[req.start + i] = req.bits[i] ? 1 : 0;
                return wire::WriteAckResponse{meta.fc, req.start,
                                              static_cast<std::uint16_t>(req.bits.size())};
            } else {
                rec.start = req.start;
                rec.count = static_cast<std::uint16_t>(req.words.size());
                if (fault_code)
                    return reject(*fault_code);
                if (req.words.empty() || req.words.size() > wire::max_write_registers)
                    return reject(3);
                if (static_cast<std::uint32_t>(req.start) + req.words.size() > 65536)
                    return reject(2);
                std::copy(req.words.begin(), req.words.end(),
                          holding_registers_.begin() + req.start);
                return wire::WriteAckResponse{meta.fc, req.start,
                                              static_cast<std::uint16_t>(req.words.size())};
            }
        },
        request);
}

void SlaveServer::append_record(const RequestRecord& rec) {
    if (opts_.log_stream) {
        std::lock_guard lk(log_mu_);
        (*opts_.log_stream) << to_json_line(rec) << '\n';
        opts_.log_stream->flush();
    }
    if (opts_.keep_records) {
        std::lock_guard lk(log_mu_);
        records_.push_back(rec);
    }
}

std::vector<RequestRecord> SlaveServer::log_snapshot() const {
    std::lock_guard lk(log_mu_);
    return records_;
}

void SlaveServer::set_faults(const FaultPolicy& faults) {
    std::lock_guard lk(faults_mu_);
    faults_ = faults;
}

namespace {

void check_offset(std::uint32_t offset) {
    if (offset >= 65536)
        throw Error(Errc::offset_out_of_range, std::to_string(offset));
}

} // namespace

void SlaveServer::poke(config::Table table, std::uint32_t offset, std::uint16_t value) {
    check_offset(offset);
    std::lock_guard lk(mem_mu_);
    switch (table) {
    case config::Table::coil: coils_[offset] = value ? 1 : 0; break;
    case config::Table::discrete_input: discrete_inputs_[offset] = value ? 1 : 0; break;
    case config::Table::input_register: input_registers_[offset] = value; break;
    case config::Table::holding_register: holding_registers_[offset] = value; break;
    }
}

std::uint16_t SlaveServer::peek(config::Table table, std::uint32_t offset) const {
    check_offset(offset);
    std::lock_guard lk(mem_mu_);
    switch (table) {
    case config::Table::coil: return coils_[offset];
    case config::Table::discrete_input: return discrete_inputs_[offset];
    case config::Table::input_register: return input_registers_[offset];
    case config::Table::holding_register: return holding_registers_[offset];
    }
    return 0;
}

void SlaveServer::load_memory(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw Error(Errc::syntax_error, "cannot open " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw Error(Errc::syntax_error, path + ": " + e.what());
    }
    if (!doc.is_object())
        throw Error(Errc::syntax_error, path + ": expected an object");

    static const std::pair<const char*, config::Table> tables[] = {
        {"coils", config::Table::coil},
        {"discrete_inputs", config::Table::discrete_input},
        {"input_registers", config::Table::input_register},
        {"holding_registers", config::Table::holding_register},
    };
    for (const auto& [key, table] : tables) {
        if (!doc.contains(key))
            continue;
        const json& section = doc.at(key);
        if (!section.is_object())
            throw Error(Errc::syntax_error, std::string(key) + ": expected an object");
        for (const auto& [offset_str, value] : section.items()) {
            std::uint32_t offset = 0;
            try {
                offset = static_cast<std::uint32_t>(std::stoul(offset_str));
            } catch (const std::exception&) {
                throw Error(Errc::syntax_error, std::string(key) + ": bad offset " + offset_str);
            }
            std::uint16_t v = 0;
            if (value.is_boolean())
                v = value.get<bool>() ? 1 : 0;
            else if (value.is_number_unsigned() && value.get<std::uint64_t>() <= 0xFFFF)
                v = static_cast<std::uint16_t>(value.get<std::uint64_t>());
            else
                throw Error(Errc::syntax_error,
                            std::string(key) + "[" + offset_str + "]: bad value");
            poke(table, offset, v);
        }
    }
}

} // namespace mbgw::sim
