#include "mbgw/wiring.hpp"

namespace mbgw::gw {

void register_device_writes(ndjson::Server& server, client::DeviceClient& device,
                            bus::TopicBus& bus) {
    for (const config::IoMapping& m : device.config().mappings) {
        if (m.write_topic.empty())
            continue;
        server.register_write_topic(
            m.write_topic,
            [&device, &bus, m](const std::string& topic, const nlohmann::json& value) {
                IoValue v = ndjson::value_from_json(value, m);
                device.write(m.io_name, v);
                bus.publish(bus::TopicMessage{topic, std::move(v), net::epoch_us()});
            });
    }
}

} // namespace mbgw::gw
