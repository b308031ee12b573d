#pragma once

#include "mbgw/client.hpp"
#include "mbgw/ndjson.hpp"

namespace mbgw::gw {

// Registers every output mapping's write topic with the server. The handler
// coerces the JSON value to the IO's type, queues the device write and then
// mirrors the accepted command on the bus so write topics are observable.
void register_device_writes(ndjson::Server& server, client::DeviceClient& device,
                            bus::TopicBus& bus);

} // namespace mbgw::gw
