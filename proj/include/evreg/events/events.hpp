#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evreg/tensor/ndarray.hpp"

namespace evreg {

struct Event {
  std::uint64_t t = 0;  // microseconds
  std::uint16_t x = 0;  // column
  std::uint16_t y = 0;  // row
  std::int8_t p = 1;    // -1 or +1

  bool operator==(const Event&) const = default;
};

/// Time-sorted events from a W x H sensor.
struct EventStream {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<Event> events;

  bool operator==(const EventStream&) const = default;
};

/// Events of one temporal window together with its bounds [t_start, t_end).
struct EventWindow {
  EventStream events;
  std::uint64_t t_start = 0;
  std::uint64_t t_end = 0;
};

/// data: [N,H,W,B]. windows[n] are the bounds of frame n; consecutive windows
/// share an endpoint.
struct EventTensorStack {
  NdArray data;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> windows;

  std::size_t frames() const { return data.dim(0); }
  std::size_t bins() const { return data.dim(3); }
};

/// Throws on out-of-range coordinates, bad polarity or decreasing time.
void validate(const EventStream& s);

/// Reads EVT1 (detected by magic) or CSV. CSV files may carry a leading
/// "# width=W height=H" line; without it the extent is max coordinate + 1.
EventStream parse_events(const std::filesystem::path& path);
void write_evt1(const EventStream& s, const std::filesystem::path& path);
void write_events_csv(const EventStream& s, const std::filesystem::path& path);

/// Events with t in [t0, t1].
EventStream slice_events(const EventStream& s, std::uint64_t t0, std::uint64_t t1);

/// N windows of width (t1 - t0)/N; window i is [t0 + i*d, t0 + (i+1)*d), the
/// last one also contains t1. Events outside [t0, t1] are dropped.
std::vector<EventWindow> window_events(const EventStream& s, std::uint64_t t0,
                                       std::uint64_t t1, long N);

/// Polarity-signed counts of each window split into B equal sub-bins.
EventTensorStack build_event_frames(const std::vector<EventWindow>& windows, std::size_t B);

/// window_events followed by build_event_frames.
EventTensorStack make_event_stack(const EventStream& s, std::uint64_t t0, std::uint64_t t1,
                                  std::size_t N, std::size_t B);

/// Time reversal: frames in reverse order with negated polarity; window
/// bounds follow their frames.
EventTensorStack reverse_frames(const EventTensorStack& stack);

/// Voxel grid [H,W,B] with the bilinear temporal kernel over [t0, t1].
/// normalize rescales by the max absolute cell when it is non-zero.
NdArray build_voxel_grid(const EventStream& s, std::uint64_t t0, std::uint64_t t1,
                         std::size_t B, bool normalize = false);

}  // namespace evreg
