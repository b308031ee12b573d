#pragma once

#include "mbgw/value.hpp"

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace mbgw::bus {

struct TopicMessage {
    std::string topic;
    IoValue value;
    std::int64_t ts_us = 0; // wall clock, microseconds since epoch
};

// Topics are "/"-separated paths: "/device/io", "/device/io/write", ...
// A subscription pattern is either an exact topic or a prefix wildcard
// such as "/device/*" which matches every topic below "/device/".
bool topic_valid(const std::string& topic);
bool pattern_valid(const std::string& pattern);
bool pattern_matches(const std::string& pattern, const std::string& topic);

class TopicBus;

// Bounded mailbox attached to a bus. When full, the oldest message is
// dropped and the drop counter increments; publishers never block.
class Subscription {
public:
    ~Subscription();

    bool pop(TopicMessage& out, std::chrono::milliseconds timeout);
    bool try_pop(TopicMessage& out);

    std::uint64_t dropped() const;
    std::size_t depth() const { return depth_; }
    std::vector<std::string> patterns() const;

    void close(); // wakes blocked pop() calls, detaches from the bus

private:
    friend class TopicBus;
    explicit Subscription(std::size_t depth) : depth_(depth) {}

    void deliver(const TopicMessage& msg);

    const std::size_t depth_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::deque<TopicMessage> queue_;
    std::vector<std::string> patterns_;
    std::uint64_t drops_ = 0;
    bool closed_ = false;
};

class TopicBus {
public:
    explicit TopicBus(std::size_t default_depth = 1024) : default_depth_(default_depth) {}

    // depth 0 means the bus default. Throws Error(invalid_topic) on a bad pattern.
    std::shared_ptr<Subscription> subscribe(const std::string& pattern, std::size_t depth = 0);
    void add_pattern(Subscription& sub, const std::string& pattern);

    // Delivery order to each subscriber matches publish order.
    void publish(TopicMessage msg);
    void publish(std::string topic, IoValue value);

    std::uint64_t published() const;

private:
    const std::size_t default_depth_;
    mutable std::mutex mu_;
    std::vector<std::weak_ptr<Subscription>> subs_;
    std::uint64_t published_ = 0;
};

} // namespace mbgw::bus
