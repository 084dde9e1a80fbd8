"""Online mid-price forecasting on Level-1 limit order book streams."""
