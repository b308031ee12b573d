#include "mbgw/client.hpp"
#include "mbgw/iec.hpp"

#include <algorithm>
#include <array>

namespace mbgw::client {

using namespace std::chrono;

ModbusTcpClient::ModbusTcpClient(std::string host, std::uint16_t port, std::uint8_t unit,
                                 std::chrono::milliseconds response_timeout,
                                 std::chrono::milliseconds connect_timeout)
    : host_(std::move(host)), port_(port), unit_(unit),
      response_timeout_(response_timeout), connect_timeout_(connect_timeout) {}

void ModbusTcpClient::connect() {
    stream_ = net::TcpStream::connect(host_, port_, connect_timeout_);
    reassembler_.reset();
}

void ModbusTcpClient::close() noexcept {
    stream_.close();
    reassembler_.reset();
}

wire::ResponsePdu ModbusTcpClient::transact(const wire::RequestPdu& request) {
    if (!stream_.valid())
        throw Error(Errc::transport_error, "not connected");

    const std::uint16_t tid = ++tid_;
    wire::MbapHeader header{tid, 0, 0, unit_};
    stream_.send_all(wire::encode_request(header, request));

    const auto deadline = steady_clock::now() + response_timeout_;
    std::array<std::uint8_t, 4096> buf;
    std::vector<std::uint8_t> frame;
    for (;;) {
        while (reassembler_.next(frame)) {
            auto [rh, response] = wire::decode_response(frame);
            if (rh.transaction_id != tid)
                throw Error(Errc::transport_error,
                            "transaction id mismatch: sent " + std::to_string(tid) + ", got " +
                                std::to_string(rh.transaction_id));
            return response;
        }
        auto left = duration_cast<milliseconds>(deadline - steady_clock::now());
        if (left.count() <= 0)
            throw Error(Errc::timeout, "no response within " +
                                           std::to_string(response_timeout_.count()) + " ms");
        std::size_t n = stream_.recv_some(buf, left);
        if (n == 0)
            throw Error(Errc::transport_error, "connection closed by peer");
        reassembler_.feed(std::span(buf.data(), n));
    }
}

namespace {

wire::FunctionCode read_fc(config::Table table) {
    switch (table) {
    case config::Table::coil: return wire::FunctionCode::read_coils;
    case config::Table::discrete_input: return wire::FunctionCode::read_discrete_inputs;
    case config::Table::holding_register: return wire::FunctionCode::read_holding_registers;
    case config::Table::input_register: return wire::FunctionCode::read_input_registers;
    }
    throw Error(Errc::type_mismatch, "bad table");
}

} // namespace

DeviceClient::DeviceClient(config::DeviceConfig cfg, bus::TopicBus& bus, DeviceClientOptions opts)
    : cfg_(std::move(cfg)), bus_(bus), opts_(std::move(opts)),
      backoff_(opts_.backoff_initial) {
    ranges_ = plan::plan(cfg_.mappings, opts_.planner);
    for (std::size_t i = 0; i < cfg_.mappings.size(); ++i) {
        by_io_name_.emplace(cfg_.mappings[i].io_name, i);
        if (!cfg_.mappings[i].write_topic.empty())
            by_write_topic_.emplace(cfg_.mappings[i].write_topic, i);
    }
}

DeviceClient::~DeviceClient() { stop(); }

void DeviceClient::start(bool require_connection) {
    {
        std::lock_guard lk(mu_);
        if (running_)
            return;
        running_ = true;
        stopping_ = false;
    }
    next_attempt_ = steady_clock::now();
    if (require_connection) {
        session_.emplace(cfg_.address, cfg_.port, cfg_.unit, opts_.response_timeout,
                         opts_.connect_timeout);
        try {
            session_->connect();
        } catch (...) {
            session_.reset();
            std::lock_guard lk(mu_);
            running_ = false;
            throw;
        }
        connected_once_ = true;
        link_up_ = true;
        emit(ClientEvent::Kind::connected, cfg_.address + ":" + std::to_string(cfg_.port));
    }
    thread_ = std::thread([this] { engine(); });
}

void DeviceClient::stop() {
    {
        std::lock_guard lk(mu_);
        if (!running_)
            return;
        stopping_ = true;
    }
    cv_.notify_all();
    if (thread_.joinable())
        thread_.join();
    session_.reset();
    link_up_ = false;
    std::lock_guard lk(mu_);
    running_ = false;
}

bool DeviceClient::connected() const { return link_up_; }

DeviceStats DeviceClient::stats() const {
    std::lock_guard lk(stats_mu_);
    return stats_;
}

std::vector<std::string> DeviceClient::write_topics() const {
    std::vector<std::string> out;
    out.reserve(by_write_topic_.size());
    for (const auto& m : cfg_.mappings)
        if (!m.write_topic.empty())
            out.push_back(m.write_topic);
    return out;
}

void DeviceClient::write(const std::string& io_name, const IoValue& value) {
    auto it = by_io_name_.find(io_name);
    if (it == by_io_name_.end())
        throw Error(Errc::unknown_topic, "no io named " + io_name);
    const config::IoMapping& m = cfg_.mappings[it->second];
    if (!config::is_output_table(m.table))
        throw Error(Errc::write_to_input, io_name + " maps " + config::to_string(m.table));

    PendingWrite pw{it->second, wire::ReadRequest{}};
    if (m.table == config::Table::coil) {
        if (!std::holds_alternative<bool>(value))
            throw Error(Errc::type_mismatch, io_name + " expects Bool, got " + tag_name(value));
        pw.pdu = wire::make_write(wire::OutputTable::coil, m.offset,
                                  std::vector<bool>{std::get<bool>(value)});
    } else {
        auto words = iec::encode_registers(*m.type, value, cfg_.word_order);
        pw.pdu = wire::make_write(wire::OutputTable::holding_register, m.offset, words);
    }

    {
        std::lock_guard lk(mu_);
        if (stopping_ || !running_)
            throw Error(Errc::transport_error, "device client not running");
        write_queue_.push_back(std::move(pw));
    }
    cv_.notify_all();
}

void DeviceClient::submit(const std::string& write_topic, const IoValue& value) {
    auto it = by_write_topic_.find(write_topic);
    if (it == by_write_topic_.end())
        throw Error(Errc::unknown_topic, write_topic);
    write(cfg_.mappings[it->second].io_name, value);
}

void DeviceClient::emit(ClientEvent::Kind kind, const std::string& detail) {
    if (opts_.on_event)
        opts_.on_event(ClientEvent{kind, detail, net::epoch_us()});
}

void DeviceClient::engine() {
    const auto period = duration_cast<steady_clock::duration>(duration<double>(1.0 / cfg_.rate));
    auto next_tick = steady_clock::now();

    for (;;) {
        {
            std::unique_lock lk(mu_);
            cv_.wait_until(lk, next_tick, [this] { return stopping_ || !write_queue_.empty(); });
            if (stopping_)
                break;
        }

        ensure_connected();
        run_pending_writes();

        if (steady_clock::now() < next_tick)
            continue;

        bool polled = false;
        if (session_) {
            const auto t0 = steady_clock::now();
            poll_cycle();
            polled = true;
            std::lock_guard lk(stats_mu_);
            stats_.last_poll_us = duration_cast<microseconds>(steady_clock::now() - t0).count();
        }

        const auto now = steady_clock::now();
        next_tick += period;
        {
            std::lock_guard lk(stats_mu_);
            if (!polled)
                ++stats_.skipped_polls;
            while (next_tick <= now) { // missed ticks are skipped, not queued
                next_tick += period;
                if (polled)
                    ++stats_.overruns;
                else
                    ++stats_.skipped_polls;
            }
        }
    }
}

void DeviceClient::ensure_connected() {
    if (session_)
        return;
    const auto now = steady_clock::now();
    if (now < next_attempt_)
        return;
    session_.emplace(cfg_.address, cfg_.port, cfg_.unit, opts_.response_timeout,
                     opts_.connect_timeout);
    try {
        session_->connect();
    } catch (const Error& e) {
        session_.reset();
        next_attempt_ = steady_clock::now() + backoff_;
        backoff_ = std::min(backoff_ * 2, opts_.backoff_cap);
        emit(ClientEvent::Kind::connect_failed, e.what());
        return;
    }
    backoff_ = opts_.backoff_initial;
    link_up_ = true;
    if (connected_once_) {
        std::lock_guard lk(stats_mu_);
        ++stats_.reconnects;
    }
    connected_once_ = true;
    emit(ClientEvent::Kind::connected, cfg_.address + ":" + std::to_string(cfg_.port));
}

void DeviceClient::drop_connection(const std::string& why) {
    session_.reset();
    link_up_ = false;
    {
        std::lock_guard lk(stats_mu_);
        ++stats_.transport_errors;
    }
    next_attempt_ = steady_clock::now() + backoff_;
    backoff_ = std::min(backoff_ * 2, opts_.backoff_cap);
    emit(ClientEvent::Kind::disconnected, why);
}

void DeviceClient::run_pending_writes() {
    std::vector<PendingWrite> batch;
    {
        std::lock_guard lk(mu_);
        batch.swap(write_queue_);
    }
    for (const PendingWrite& w : batch)
        execute_write(w);
}

void DeviceClient::execute_write(const PendingWrite& w) {
    const config::IoMapping& m = cfg_.mappings[w.mapping_index];
    auto fail = [&](const std::string& why) {
        {
            std::lock_guard lk(stats_mu_);
            ++stats_.write_errors;
        }
        bus_.publish(m.error_topic, IoValue(std::string("write failed: ") + why));
        emit(ClientEvent::Kind::write_error, m.io_name + ": " + why);
    };

    if (!session_) {
        fail("not connected");
        return;
    }
    wire::ResponsePdu resp;
    try {
        resp = session_->transact(w.pdu);
    } catch (const Error& e) {
        drop_connection(e.what());
        fail(e.what());
        return;
    }
    if (const auto* ex = std::get_if<wire::ExceptionResponse>(&resp)) {
        {
            std::lock_guard lk(stats_mu_);
            ++stats_.exception_responses;
        }
        fail("exception code " + std::to_string(ex->code));
        return;
    }
    std::lock_guard lk(stats_mu_);
    ++stats_.writes;
}

void DeviceClient::poll_cycle() {
    for (const plan::ReadRange& range : ranges_) {
        run_pending_writes(); // writes jump ahead of queued range reads
        if (!session_)
            return;
        if (!fetch_range(range))
            return;
    }
    std::lock_guard lk(stats_mu_);
    ++stats_.polls;
}

bool DeviceClient::fetch_range(const plan::ReadRange& range) {
    wire::ReadRequest req{read_fc(range.table), range.start_offset, range.count};
    wire::ResponsePdu resp;
    try {
        resp = session_->transact(req);
    } catch (const Error& e) {
        drop_connection(e.what());
        publish_range_error(range, e.what());
        return false;
    }
    const std::int64_t ts = net::epoch_us();

    if (const auto* ex = std::get_if<wire::ExceptionResponse>(&resp)) {
        {
            std::lock_guard lk(stats_mu_);
            ++stats_.exception_responses;
        }
        publish_range_error(range, "exception code " + std::to_string(ex->code));
        return true; // other ranges keep going
    }

    if (config::is_bit_table(range.table)) {
        const auto* bits_resp = std::get_if<wire::ReadBitsResponse>(&resp);
        if (!bits_resp) {
            drop_connection("response type mismatch");
            return false;
        }
        std::vector<bool> bits;
        try {
            bits = iec::decode_bits(bits_resp->packed, range.count);
        } catch (const Error& e) {
            drop_connection(e.what());
            return false;
        }
        for (const plan::RangeMember& m : range.members)
            bus_.publish(bus::TopicMessage{cfg_.mappings[m.mapping_index].read_topic,
                                           IoValue(static_cast<bool>(bits[m.relative_offset])), ts});
        return true;
    }

    const auto* words_resp = std::get_if<wire::ReadWordsResponse>(&resp);
    if (!words_resp || words_resp->words.size() != range.count) {
        drop_connection("response type mismatch");
        return false;
    }
    for (const auto& [idx, slice] : plan::extract(range, words_resp->words)) {
        const config::IoMapping& m = cfg_.mappings[idx];
        bus_.publish(
            bus::TopicMessage{m.read_topic, iec::decode_registers(*m.type, slice, cfg_.word_order), ts});
    }
    return true;
}

void DeviceClient::publish_range_error(const plan::ReadRange& range, const std::string& what) {
    const std::int64_t ts = net::epoch_us();
    for (const plan::RangeMember& m : range.members)
        bus_.publish(bus::TopicMessage{cfg_.mappings[m.mapping_index].error_topic,
                                       IoValue(std::string(what)), ts});
    emit(ClientEvent::Kind::range_error,
         std::string(config::to_string(range.table)) + "@" + std::to_string(range.start_offset) +
             ": " + what);
}

} // namespace mbgw::client
