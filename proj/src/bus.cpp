#include "mbgw/bus.hpp"
#include "mbgw/errors.hpp"
#include "mbgw/net.hpp"

#include <algorithm>

namespace mbgw::bus {

bool topic_valid(const std::string& topic) {
    if (topic.size() < 2 || topic.front() != '/')
        return false;
    if (topic.back() == '/')
        return false;
    for (std::size_t i = 1; i < topic.size(); ++i) {
        char c = topic[i];
        if (c == '/' && topic[i - 1] == '/')
            return false;
        if (c == '*' || c == '\n' || c == '\0')
            return false;
    }
    return true;
}

bool pattern_valid(const std::string& pattern) {
    if (pattern.size() >= 2 && pattern.ends_with("/*"))
        return topic_valid(pattern.substr(0, pattern.size() - 2));
    return topic_valid(pattern);
}

bool pattern_matches(const std::string& pattern, const std::string& topic) {
    if (pattern.ends_with("/*")) {
        std::size_t prefix_len = pattern.size() - 1; // keep the '/'
        return topic.size() > prefix_len && topic.compare(0, prefix_len, pattern, 0, prefix_len) == 0;
    }
    return pattern == topic;
}

Subscription::~Subscription() { close(); }

bool Subscription::pop(TopicMessage& out, std::chrono::milliseconds timeout) {
    std::unique_lock lk(mu_);
    cv_.wait_for(lk, timeout, [this] { return !queue_.empty() || closed_; });
    if (queue_.empty())
        return false;
    out = std::move(queue_.front());
    queue_.pop_front();
    return true;
}

bool Subscription::try_pop(TopicMessage& out) {
    std::lock_guard lk(mu_);
    if (queue_.empty())
        return false;
    out = std::move(queue_.front());
    queue_.pop_front();
    return true;
}

std::uint64_t Subscription::dropped() const {
    std::lock_guard lk(mu_);
    return drops_;
}

std::vector<std::string> Subscription::patterns() const {
    std::lock_guard lk(mu_);
    return patterns_;
}

void Subscription::close() {
    std::lock_guard lk(mu_);
    closed_ = true;
    cv_.notify_all();
}

void Subscription::deliver(const TopicMessage& msg) {
    std::lock_guard lk(mu_);
    if (closed_)
        return;
    bool matched = std::any_of(patterns_.begin(), patterns_.end(), [&](const std::string& p) {
        return pattern_matches(p, msg.topic);
    });
    if (!matched)
        return;
    if (queue_.size() >= depth_) {
        queue_.pop_front();
        ++drops_;
    }
    queue_.push_back(msg);
    cv_.notify_one();
}

std::shared_ptr<Subscription> TopicBus::subscribe(const std::string& pattern, std::size_t depth) {
    if (!pattern_valid(pattern))
        throw Error(Errc::invalid_topic, pattern);
    auto sub = std::shared_ptr<Subscription>(
        new Subscription(depth == 0 ? default_depth_ : depth));
    {
        std::lock_guard slk(sub->mu_);
        sub->patterns_.push_back(pattern);
    }
    std::lock_guard lk(mu_);
    subs_.push_back(sub);
    return sub;
}

void TopicBus::add_pattern(Subscription& sub, const std::string& pattern) {
    if (!pattern_valid(pattern))
        throw Error(Errc::invalid_topic, pattern);
    std::lock_guard lk(sub.mu_);
    if (std::find(sub.patterns_.begin(), sub.patterns_.end(), pattern) == sub.patterns_.end())
        sub.patterns_.push_back(pattern);
}

void TopicBus::publish(TopicMessage msg) {
    if (!topic_valid(msg.topic))
        throw Error(Errc::invalid_topic, msg.topic);
    std::lock_guard lk(mu_);
    ++published_;
    bool stale = false;
    for (auto& weak : subs_) {
        if (auto sub = weak.lock())
            sub->deliver(msg);
        else
            stale = true;
    }
    if (stale)
        std::erase_if(subs_, [](const std::weak_ptr<Subscription>& w) { return w.expired(); });
}

void TopicBus::publish(std::string topic, IoValue value) {
    publish(TopicMessage{std::move(topic), std::move(value), net::epoch_us()});
}

std::uint64_t TopicBus::published() const {
    std::lock_guard lk(mu_);
    return published_;
}

} // namespace mbgw::bus
