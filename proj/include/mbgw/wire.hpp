#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "mbgw/errors.hpp"

namespace mbgw::wire {

// Function codes the gateway speaks. Anything else decodes to unknown_function.
enum class FunctionCode : std::uint8_t {
    read_coils = 0x01,
    read_discrete_inputs = 0x02,
    read_holding_registers = 0x03,
    read_input_registers = 0x04,
    write_single_coil = 0x05,
    write_single_register = 0x06,
    write_multiple_coils = 0x0F,
    write_multiple_registers = 0x10,
};

bool is_supported_function(std::uint8_t fc);

// Protocol count limits per function code.
constexpr std::uint16_t max_read_bits = 2000;
constexpr std::uint16_t max_read_registers = 125;
constexpr std::uint16_t max_write_bits = 1968;
constexpr std::uint16_t max_write_registers = 123;

constexpr std::size_t mbap_size = 7;
constexpr std::size_t max_pdu_size = 253;
constexpr std::size_t max_adu_size = mbap_size + max_pdu_size;

struct MbapHeader {
    std::uint16_t transaction_id = 0;
    std::uint16_t protocol_id = 0;
    std::uint16_t length = 0; // unit id + PDU byte count
    std::uint8_t unit_id = 0;

    bool operator==(const MbapHeader&) const = default;
};

// Request PDUs

struct ReadRequest { // FC 1..4
    FunctionCode fc = FunctionCode::read_coils;
    std::uint16_t start = 0;
    std::uint16_t count = 0;

    bool operator==(const ReadRequest&) const = default;
};

struct WriteSingleRequest { // FC 5/6; FC5 encodes true as 0xFF00
    FunctionCode fc = FunctionCode::write_single_coil;
    std::uint16_t address = 0;
    std::uint16_t value = 0;

    bool operator==(const WriteSingleRequest&) const = default;
};

struct WriteBitsRequest { // FC 15
    std::uint16_t start = 0;
    std::vector<bool> bits;

    bool operator==(const WriteBitsRequest&) const = default;
};

struct WriteWordsRequest { // FC 16
    std::uint16_t start = 0;
    std::vector<std::uint16_t> words;

    bool operator==(const WriteWordsRequest&) const = default;
};

using RequestPdu = std::variant<ReadRequest, WriteSingleRequest, WriteBitsRequest, WriteWordsRequest>;

FunctionCode function_code(const RequestPdu& pdu);

// Response PDUs

struct ReadBitsResponse { // FC 1/2
    FunctionCode fc = FunctionCode::read_coils;
    std::vector<std::uint8_t> packed;

    bool operator==(const ReadBitsResponse&) const = default;
};

struct ReadWordsResponse { // FC 3/4
    FunctionCode fc = FunctionCode::read_input_registers;
    std::vector<std::uint16_t> words;

    bool operator==(const ReadWordsResponse&) const = default;
};

struct WriteAckResponse { // FC 5/6/15/16: echoes address and value (5/6) or count (15/16)
    FunctionCode fc = FunctionCode::write_single_coil;
    std::uint16_t address = 0;
    std::uint16_t value_or_count = 0;

    bool operator==(const WriteAckResponse&) const = default;
};

struct ExceptionResponse {
    FunctionCode fc = FunctionCode::read_coils; // original function, bit 0x80 stripped
    std::uint8_t code = 0;

    bool operator==(const ExceptionResponse&) const = default;
};

using ResponsePdu = std::variant<ReadBitsResponse, ReadWordsResponse, WriteAckResponse, ExceptionResponse>;

enum class OutputTable { coil, holding_register };

// ADU codec. All multi-byte fields big-endian.

std::vector<std::uint8_t> encode_request(const MbapHeader& header, const RequestPdu& pdu);

// Picks FC5/FC15 for bits and FC6/FC16 for words based on payload size.
RequestPdu make_write(OutputTable table, std::uint16_t offset, const std::vector<bool>& bits);
RequestPdu make_write(OutputTable table, std::uint16_t offset,
                      const std::vector<std::uint16_t>& words);

std::vector<std::uint8_t> encode_write(const MbapHeader& header, OutputTable table,
                                       std::uint16_t offset, const std::vector<bool>& bits);
std::vector<std::uint8_t> encode_write(const MbapHeader& header, OutputTable table,
                                       std::uint16_t offset, const std::vector<std::uint16_t>& words);

std::pair<MbapHeader, ResponsePdu> decode_response(std::span<const std::uint8_t> adu);
std::pair<MbapHeader, RequestPdu> decode_request(std::span<const std::uint8_t> adu);

std::vector<std::uint8_t> encode_response(const MbapHeader& header, const ResponsePdu& pdu);

// Splits an in-order TCP byte stream into complete ADUs using the MBAP length field.
class FrameReassembler {
public:
    void feed(std::span<const std::uint8_t> chunk);
    // Pops the next complete ADU, or returns false if more bytes are needed.
    bool next(std::vector<std::uint8_t>& adu);

    std::size_t buffered() const { return buffer_.size(); }
    void reset();

private:
    std::vector<std::uint8_t> buffer_;
    std::deque<std::vector<std::uint8_t>> ready_;
};

} // namespace mbgw::wire
