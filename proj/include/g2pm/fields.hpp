#pragma once

#include <concepts>
#include <type_traits>

namespace g2pm {

// Lets visit_fields overloads for several config structs share a namespace:
//   template <FieldsOf<MyConfig> Self, class F> void visit_fields(Self& c, F&& f);
template <class Self, class T>
concept FieldsOf = std::same_as<std::remove_const_t<Self>, T>;

}  // namespace g2pm
