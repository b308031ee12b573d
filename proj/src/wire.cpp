#include "mbgw/wire.hpp"

#include <algorithm>

namespace mbgw::wire {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t off) {
    return static_cast<std::uint16_t>((b[off] << 8) | b[off + 1]);
}

void check_read_count(FunctionCode fc, std::uint16_t count) {
    const bool bits = fc == FunctionCode::read_coils || fc == FunctionCode::read_discrete_inputs;
    const std::uint16_t limit = bits ? max_read_bits : max_read_registers;
    if (count < 1 || count > limit)
        throw Error(Errc::count_out_of_range,
                    "read count " + std::to_string(count) + " not in [1, " + std::to_string(limit) + "]");
}

void check_window(std::uint32_t start, std::uint32_t count) {
    if (start + count > 65536)
        throw Error(Errc::address_overflow,
                    "window [" + std::to_string(start) + ", +" + std::to_string(count) + ") exceeds 65536");
}

std::vector<std::uint8_t> encode_pdu(const RequestPdu& pdu) {
    std::vector<std::uint8_t> out;
    std::visit(
        [&](const auto& req) {
            using T = std::decay_t<decltype(req)>;
            if constexpr (std::is_same_v<T, ReadRequest>) {
                check_read_count(req.fc, req.count);
                check_window(req.start, req.count);
                out.push_back(static_cast<std::uint8_t>(req.fc));
                put_u16(out, req.start);
                put_u16(out, req.count);
            } else if constexpr (std::is_same_v<T, WriteSingleRequest>) {
                out.push_back(static_cast<std::uint8_t>(req.fc));
                put_u16(out, req.address);
                put_u16(out, req.value);
            } else if constexpr (std::is_same_v<T, WriteBitsRequest>) {
                if (req.bits.empty()) throw Error(Errc::empty_payload, "no coils to write");
                if (req.bits.size() > max_write_bits)
                    throw Error(Errc::count_out_of_range, "FC15 limited to " + std::to_string(max_write_bits) + " coils");
                check_window(req.start, static_cast<std::uint32_t>(req.bits.size()));
                out.push_back(static_cast<std::uint8_t>(FunctionCode::write_multiple_coils));
                put_u16(out, req.start);
                put_u16(out, static_cast<std::uint16_t>(req.bits.size()));
                const std::size_t byte_count = (req.bits.size() + 7) / 8;
                out.push_back(static_cast<std::uint8_t>(byte_count));
                for (std::size_t i = 0; i < byte_count; ++i) {
                    std::uint8_t b = 0;
                    for (std::size_t j = 0; j < 8 && i * 8 + j < req.bits.size(); ++j)
                        if (req.bits[i * 8 + j]) b |= static_cast<std::uint8_t>(1u << j);
                    out.push_back(b);
                }
            } else if constexpr (std::is_same_v<T, WriteWordsRequest>) {
                if (req.words.empty()) throw Error(Errc::empty_payload, "no registers to write");
                if (req.words.size() > max_write_registers)
                    throw Error(Errc::count_out_of_range,
                                "FC16 limited to " + std::to_string(max_write_registers) + " registers");
                check_window(req.start, static_cast<std::uint32_t>(req.words.size()));
                out.push_back(static_cast<std::uint8_t>(FunctionCode::write_multiple_registers));
                put_u16(out, req.start);
                put_u16(out, static_cast<std::uint16_t>(req.words.size()));
                out.push_back(static_cast<std::uint8_t>(req.words.size() * 2));
                for (std::uint16_t w : req.words) put_u16(out, w);
            }
        },
        pdu);
    return out;
}

std::vector<std::uint8_t> encode_pdu(const ResponsePdu& pdu) {
    std::vector<std::uint8_t> out;
    std::visit(
        [&](const auto& rsp) {
            using T = std::decay_t<decltype(rsp)>;
            if constexpr (std::is_same_v<T, ReadBitsResponse>) {
                out.push_back(static_cast<std::uint8_t>(rsp.fc));
                out.push_back(static_cast<std::uint8_t>(rsp.packed.size()));
                out.insert(out.end(), rsp.packed.begin(), rsp.packed.end());
            } else if constexpr (std::is_same_v<T, ReadWordsResponse>) {
                out.push_back(static_cast<std::uint8_t>(rsp.fc));
                out.push_back(static_cast<std::uint8_t>(rsp.words.size() * 2));
                for (std::uint16_t w : rsp.words) put_u16(out, w);
            } else if constexpr (std::is_same_v<T, WriteAckResponse>) {
                out.push_back(static_cast<std::uint8_t>(rsp.fc));
                put_u16(out, rsp.address);
                put_u16(out, rsp.value_or_count);
            } else if constexpr (std::is_same_v<T, ExceptionResponse>) {
                out.push_back(static_cast<std::uint8_t>(rsp.fc) | 0x80);
                out.push_back(rsp.code);
            }
        },
        pdu);
    return out;
}

std::vector<std::uint8_t> frame_adu(const MbapHeader& header, std::vector<std::uint8_t> pdu) {
    if (header.protocol_id != 0) throw Error(Errc::malformed_frame, "protocol id must be zero");
    if (pdu.empty() || pdu.size() > max_pdu_size) throw Error(Errc::malformed_frame, "bad PDU size");
    std::vector<std::uint8_t> out;
    out.reserve(mbap_size + pdu.size());
    put_u16(out, header.transaction_id);
    put_u16(out, 0);
    put_u16(out, static_cast<std::uint16_t>(1 + pdu.size()));
    out.push_back(header.unit_id);
    out.insert(out.end(), pdu.begin(), pdu.end());
    return out;
}

MbapHeader decode_mbap(std::span<const std::uint8_t> adu) {
    if (adu.size() < mbap_size + 1) throw Error(Errc::malformed_frame, "ADU shorter than MBAP + function code");
    MbapHeader h;
    h.transaction_id = get_u16(adu, 0);
    h.protocol_id = get_u16(adu, 2);
    h.length = get_u16(adu, 4);
    h.unit_id = adu[6];
    if (h.protocol_id != 0) throw Error(Errc::malformed_frame, "nonzero protocol id");
    if (h.length != adu.size() - 6)
        throw Error(Errc::malformed_frame, "MBAP length " + std::to_string(h.length) + " disagrees with ADU size");
    return h;
}

} // namespace

bool is_supported_function(std::uint8_t fc) {
    switch (fc) {
    case 0x01: case 0x02: case 0x03: case 0x04:
    case 0x05: case 0x06: case 0x0F: case 0x10:
        return true;
    default:
        return false;
    }
}

FunctionCode function_code(const RequestPdu& pdu) {
    return std::visit(
        [](const auto& req) -> FunctionCode {
            using T = std::decay_t<decltype(req)>;
            if constexpr (std::is_same_v<T, ReadRequest>) return req.fc;
            else if constexpr (std::is_same_v<T, WriteSingleRequest>) return req.fc;
            else if constexpr (std::is_same_v<T, WriteBitsRequest>) return FunctionCode::write_multiple_coils;
            else return FunctionCode::write_multiple_registers;
        },
        pdu);
}

std::vector<std::uint8_t> encode_request(const MbapHeader& header, const RequestPdu& pdu) {
    return frame_adu(header, encode_pdu(pdu));
}

RequestPdu make_write(OutputTable table, std::uint16_t offset, const std::vector<bool>& bits) {
    if (table != OutputTable::coil) throw Error(Errc::type_mismatch, "bit payload targets the coil table");
    if (bits.empty()) throw Error(Errc::empty_payload, "no coils to write");
    if (bits.size() == 1)
        return WriteSingleRequest{FunctionCode::write_single_coil, offset,
                                  static_cast<std::uint16_t>(bits[0] ? 0xFF00 : 0x0000)};
    return WriteBitsRequest{offset, bits};
}

RequestPdu make_write(OutputTable table, std::uint16_t offset,
                      const std::vector<std::uint16_t>& words) {
    if (table != OutputTable::holding_register)
        throw Error(Errc::type_mismatch, "word payload targets the holding register table");
    if (words.empty()) throw Error(Errc::empty_payload, "no registers to write");
    if (words.size() == 1)
        return WriteSingleRequest{FunctionCode::write_single_register, offset, words[0]};
    return WriteWordsRequest{offset, words};
}

std::vector<std::uint8_t> encode_write(const MbapHeader& header, OutputTable table,
                                       std::uint16_t offset, const std::vector<bool>& bits) {
    return encode_request(header, make_write(table, offset, bits));
}

std::vector<std::uint8_t> encode_write(const MbapHeader& header, OutputTable table,
                                       std::uint16_t offset, const std::vector<std::uint16_t>& words) {
    return encode_request(header, make_write(table, offset, words));
}

std::pair<MbapHeader, ResponsePdu> decode_response(std::span<const std::uint8_t> adu) {
    const MbapHeader header = decode_mbap(adu);
    const auto pdu = adu.subspan(mbap_size);
    const std::uint8_t raw_fc = pdu[0];

    if (raw_fc & 0x80) {
        const std::uint8_t base = raw_fc & 0x7F;
        if (!is_supported_function(base))
            throw Error(Errc::unknown_function, "exception for function " + std::to_string(base));
        if (pdu.size() != 2) throw Error(Errc::malformed_frame, "exception PDU must be 2 bytes");
        return {header, ExceptionResponse{static_cast<FunctionCode>(base), pdu[1]}};
    }
    if (!is_supported_function(raw_fc))
        throw Error(Errc::unknown_function, "function " + std::to_string(raw_fc));

    const auto fc = static_cast<FunctionCode>(raw_fc);
    switch (fc) {
    case FunctionCode::read_coils:
    case FunctionCode::read_discrete_inputs: {
        if (pdu.size() < 2) throw Error(Errc::malformed_frame, "truncated bit read response");
        const std::uint8_t byte_count = pdu[1];
        if (pdu.size() != 2u + byte_count) throw Error(Errc::malformed_frame, "bit read byte count mismatch");
        ReadBitsResponse rsp{fc, {pdu.begin() + 2, pdu.end()}};
        return {header, std::move(rsp)};
    }
    case FunctionCode::read_holding_registers:
    case FunctionCode::read_input_registers: {
        if (pdu.size() < 2) throw Error(Errc::malformed_frame, "truncated register read response");
        const std::uint8_t byte_count = pdu[1];
        if (byte_count % 2 != 0) throw Error(Errc::malformed_frame, "odd register byte count");
        if (pdu.size() != 2u + byte_count) throw Error(Errc::malformed_frame, "register read byte count mismatch");
        ReadWordsResponse rsp{fc, {}};
        rsp.words.reserve(byte_count / 2);
        for (std::size_t i = 0; i < byte_count; i += 2) rsp.words.push_back(get_u16(pdu, 2 + i));
        return {header, std::move(rsp)};
    }
    case FunctionCode::write_single_coil:
    case FunctionCode::write_single_register:
    case FunctionCode::write_multiple_coils:
    case FunctionCode::write_multiple_registers: {
        if (pdu.size() != 5) throw Error(Errc::malformed_frame, "write ack PDU must be 5 bytes");
        return {header, WriteAckResponse{fc, get_u16(pdu, 1), get_u16(pdu, 3)}};
    }
    }
    throw Error(Errc::unknown_function, "function " + std::to_string(raw_fc));
}

std::pair<MbapHeader, RequestPdu> decode_request(std::span<const std::uint8_t> adu) {
    const MbapHeader header = decode_mbap(adu);
    const auto pdu = adu.subspan(mbap_size);
    const std::uint8_t raw_fc = pdu[0];
    if (!is_supported_function(raw_fc)) throw Error(Errc::unknown_function, "function " + std::to_string(raw_fc));

    const auto fc = static_cast<FunctionCode>(raw_fc);
    switch (fc) {
    case FunctionCode::read_coils:
    case FunctionCode::read_discrete_inputs:
    case FunctionCode::read_holding_registers:
    case FunctionCode::read_input_registers: {
        if (pdu.size() != 5) throw Error(Errc::malformed_frame, "read request PDU must be 5 bytes");
        return {header, ReadRequest{fc, get_u16(pdu, 1), get_u16(pdu, 3)}};
    }
    case FunctionCode::write_single_coil:
    case FunctionCode::write_single_register: {
        if (pdu.size() != 5) throw Error(Errc::malformed_frame, "single write PDU must be 5 bytes");
        return {header, WriteSingleRequest{fc, get_u16(pdu, 1), get_u16(pdu, 3)}};
    }
    case FunctionCode::write_multiple_coils: {
        if (pdu.size() < 6) throw Error(Errc::malformed_frame, "truncated FC15 request");
        const std::uint16_t start = get_u16(pdu, 1);
        const std::uint16_t count = get_u16(pdu, 3);
        const std::uint8_t byte_count = pdu[5];
        if (pdu.size() != 6u + byte_count) throw Error(Errc::malformed_frame, "FC15 byte count mismatch");
        if (byte_count != (count + 7) / 8) throw Error(Errc::malformed_frame, "FC15 byte count disagrees with bit count");
        WriteBitsRequest req{start, {}};
        req.bits.reserve(count);
        for (std::uint16_t i = 0; i < count; ++i)
            req.bits.push_back((pdu[6 + i / 8] >> (i % 8)) & 1);
        return {header, std::move(req)};
    }
    case FunctionCode::write_multiple_registers: {
        if (pdu.size() < 6) throw Error(Errc::malformed_frame, "truncated FC16 request");
        const std::uint16_t start = get_u16(pdu, 1);
        const std::uint16_t count = get_u16(pdu, 3);
        const std::uint8_t byte_count = pdu[5];
        if (byte_count != count * 2) throw Error(Errc::malformed_frame, "FC16 byte count disagrees with word count");
        if (pdu.size() != 6u + byte_count) throw Error(Errc::malformed_frame, "FC16 byte count mismatch");
        WriteWordsRequest req{start, {}};
        req.words.reserve(count);
        for (std::uint16_t i = 0; i < count; ++i) req.words.push_back(get_u16(pdu, 6 + 2 * i));
        return {header, std::move(req)};
    }
    }
    throw Error(Errc::unknown_function, "function " + std::to_string(raw_fc));
}

std::vector<std::uint8_t> encode_response(const MbapHeader& header, const ResponsePdu& pdu) {
    return frame_adu(header, encode_pdu(pdu));
}

void FrameReassembler::feed(std::span<const std::uint8_t> chunk) {
    buffer_.insert(buffer_.end(), chunk.begin(), chunk.end());
    while (buffer_.size() >= mbap_size) {
        const std::uint16_t length = static_cast<std::uint16_t>((buffer_[4] << 8) | buffer_[5]);
        if (length < 2 || length > max_pdu_size + 1)
            throw Error(Errc::malformed_frame, "impossible MBAP length " + std::to_string(length));
        const std::size_t total = 6 + length;
        if (buffer_.size() < total) break;
        ready_.emplace_back(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(total));
        buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(total));
    }
}

bool FrameReassembler::next(std::vector<std::uint8_t>& adu) {
    if (ready_.empty()) return false;
    adu = std::move(ready_.front());
    ready_.pop_front();
    return true;
}

void FrameReassembler::reset() {
    buffer_.clear();
    ready_.clear();
}

} // namespace mbgw::wire
